"""Event-driven sigma-delta runtime.

Layers communicate *changes*: a neuron compares its freshly requantized
activation against the value it last sent downstream and, when the difference
exceeds its threshold, emits a graded spike carrying the (payload-width
clamped) signed difference.  Receivers scatter each payload through the
weights into persistent accumulators, so every layer reconstructs its input
as a running sum and the dense result is recovered exactly at threshold 0.

The pipeline is barrier-synchronized: each timestep, every layer consumes the
spikes its predecessor emitted on the previous timestep, so a frame entering
the encoder at timestep t reaches the output running sum at timestep t + L
for an L-layer graph.

State is initialized to the network's resting response — what a dense pass
over "no input yet" (an all-zero raw code tensor) produces, including the
zero-point make-up for padded border windows.  That makes the replay exact
from the very first frame, keeps all-zero videos completely silent, and lets
idle layers skip their update as a pure optimization.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .convert import SDNNGraph, SDNNLayer, pad_correction
from .fixedpoint import BitwidthConfig, check_signed_range, signed_limits
from .quantization import QuantParams, QuantTensor, quantize_tensor


@dataclass(frozen=True)
class GradedSpike:
    """A single event: flat neuron index plus signed integer payload."""

    neuron: int
    payload: int


@dataclass
class SpikeBatch:
    """All spikes one stage emitted in one timestep.

    neurons are flat indices into the emitting stage's (C, H, W) output,
    strictly increasing; payloads are nonzero signed integers.  origin is the
    emitting layer index, -1 for the delta encoder.
    """

    timestep: int
    origin: int
    neurons: np.ndarray
    payloads: np.ndarray

    def __post_init__(self) -> None:
        self.neurons = np.asarray(self.neurons, dtype=np.int64)
        self.payloads = np.asarray(self.payloads, dtype=np.int64)
        if self.neurons.shape != self.payloads.shape or self.neurons.ndim != 1:
            raise ValueError("neurons and payloads must be matching 1-D arrays")
        if self.neurons.size:
            if np.any(np.diff(self.neurons) <= 0):
                raise ValueError("neuron indices must be strictly increasing")
            if np.any(self.payloads == 0):
                raise ValueError("payloads must be nonzero")

    def __len__(self) -> int:
        return int(self.neurons.size)

    def spikes(self):
        """Iterate the batch as GradedSpike values."""
        for n, p in zip(self.neurons.tolist(), self.payloads.tolist()):
            yield GradedSpike(n, p)


def _clamp_payloads(delta: np.ndarray, payload_bits: int) -> tuple[np.ndarray, int]:
    """Clamp spike payloads to their signed width; returns (payloads, n_saturated)."""
    lo, hi = signed_limits(payload_bits)
    clamped = np.clip(delta, lo, hi)
    return clamped, int(np.count_nonzero(clamped != delta))


def delta_encode(
    frame_q: QuantTensor,
    reference: np.ndarray | None = None,
    threshold: int = 0,
    payload_bits: int = 16,
    timestep: int = 0,
) -> SpikeBatch:
    """Sparse difference of a quantized frame against a reference state.

    reference is the cumulative value already transmitted (None means nothing
    was sent yet, i.e. all zeros — the first frame is emitted in full).  Only
    differences with |diff| > threshold are emitted, clamped to the payload
    width.  Mutates nothing; the stateful wrapper is DeltaEncoder.
    """
    codes = frame_q.data.astype(np.int64).ravel()
    ref = np.zeros_like(codes) if reference is None else np.asarray(reference, dtype=np.int64).ravel()
    if ref.shape != codes.shape:
        raise ValueError(f"reference shape {ref.shape} does not match frame {codes.shape}")
    delta = codes - ref
    fire = np.flatnonzero(np.abs(delta) > threshold)
    payloads, _ = _clamp_payloads(delta[fire], payload_bits)
    return SpikeBatch(timestep, -1, fire, payloads)


class DeltaEncoder:
    """Stateful input stage: quantized frames in, graded spike batches out.

    Carries the transmitted running value per pixel so residuals survive both
    thresholding and payload clamping.
    """

    def __init__(self, qparams: QuantParams, dims: tuple[int, int, int],
                 threshold: int = 0, payload_bits: int = 16) -> None:
        self.qparams = qparams
        self.dims = dims
        self.threshold = int(threshold)
        self.payload_bits = int(payload_bits)
        self.sent = np.zeros(int(np.prod(dims)), dtype=np.int64)
        self.saturations = 0

    def encode(self, frame_q: QuantTensor, timestep: int) -> SpikeBatch:
        if frame_q.qparams != self.qparams:
            raise ValueError("frame qparams do not match the encoder's qparams")
        if frame_q.shape != self.dims:
            raise ValueError(f"frame shape {frame_q.shape} does not match encoder dims {self.dims}")
        delta = frame_q.data.astype(np.int64).ravel() - self.sent
        fire = np.flatnonzero(np.abs(delta) > self.threshold)
        payloads, n_sat = _clamp_payloads(delta[fire], self.payload_bits)
        self.sent[fire] += payloads
        self.saturations += n_sat
        return SpikeBatch(timestep, -1, fire, payloads)


@dataclass
class NeuronBlockState:
    """Per-layer persistent state: accumulators and last-sent activations."""

    acc: np.ndarray  # int64 (O, OH, OW): running weighted input sum + rest bias terms
    sent: np.ndarray  # int64 (O, OH, OW): activation value last communicated downstream
    last_y: np.ndarray  # int64 (O, OH, OW): most recent requantized activation
    dirty: bool = False  # a payload saturated; the layer must re-step to drain
    saturations: int = 0


def scatter_spikes(
    batch: SpikeBatch,
    layer: SDNNLayer,
    state: NeuronBlockState,
    bitwidths: BitwidthConfig,
) -> int:
    """Apply one spike batch through the layer's weights into its accumulators.

    Each spike at input position (c, i, j) adds payload * w[o, c, kh, kw] to
    every output position whose kernel window covers (i, j); windows hanging
    over the border are clipped, so no work is done (or counted) for padding.
    Returns the number of weight applications (synops).
    """
    c_in, h_in, w_in = layer.in_dims
    o_out, oh, ow = layer.out_dims
    if batch.neurons.size and int(batch.neurons[-1]) >= c_in * h_in * w_in:
        raise ValueError("spike index outside the layer's input dimensions")
    if not batch.neurons.size:
        return 0
    c, rem = np.divmod(batch.neurons, h_in * w_in)
    i, j = np.divmod(rem, w_in)
    k, s, p = layer.kernel, layer.stride, layer.padding
    w = layer.weights.astype(np.int64)
    acc_flat = state.acc.reshape(o_out, oh * ow)
    synops = 0
    for kh in range(k):
        oi_num = i + p - kh
        for kw in range(k):
            oj_num = j + p - kw
            valid = (
                (oi_num >= 0) & (oj_num >= 0)
                & (oi_num % s == 0) & (oj_num % s == 0)
                & (oi_num < oh * s) & (oj_num < ow * s)
            )
            idx = np.flatnonzero(valid)
            if not idx.size:
                continue
            pos = (oi_num[idx] // s) * ow + (oj_num[idx] // s)
            contrib = batch.payloads[idx, None] * w[:, c[idx], kh, kw].T  # (n, O)
            np.add.at(acc_flat, (slice(None), pos), contrib.T)
            synops += idx.size * o_out
    check_signed_range(state.acc, bitwidths.acc_bits, "accumulator")
    return synops


def neuron_step(
    state: NeuronBlockState,
    layer: SDNNLayer,
    timestep: int,
    origin: int,
    bitwidths: BitwidthConfig,
) -> SpikeBatch:
    """Requantize the block and emit threshold-crossing changes.

    y = clamp(((relu(acc + bias)) * scale >> scale_exp) + z_out); a neuron
    fires when |y - sent| > threshold (strict), advancing `sent` by the
    emitted (payload-clamped) amount so any clamp residual is carried.
    """
    y, _ = engine.requantize_fixed(state.acc, layer, bitwidths)
    delta = y.ravel() - state.sent.ravel()
    fire = np.flatnonzero(np.abs(delta) > layer.threshold)
    payloads, n_sat = _clamp_payloads(delta[fire], bitwidths.payload_bits)
    state.sent.reshape(-1)[fire] += payloads
    state.last_y = y
    state.saturations += n_sat
    state.dirty = n_sat > 0
    return SpikeBatch(timestep, origin, fire, payloads)


@dataclass
class StepOutcome:
    """Counters and the output-layer emission of one pipeline timestep."""

    timestep: int
    encoder_spikes: int
    layer_spikes: list[int]
    layer_synops: list[int]
    layer_saturations: list[int]
    output_batch: SpikeBatch | None


class PipelineState:
    """Mutable state of the whole pipeline: encoder, blocks, inboxes, output sum."""

    def __init__(self, graph: SDNNGraph) -> None:
        self.graph = graph
        bw = graph.bitwidths
        self.encoder = DeltaEncoder(
            graph.input_qparams, graph.input_dims, graph.encoder_threshold, bw.payload_bits
        )
        self.blocks: list[NeuronBlockState] = []
        rest = np.zeros(graph.input_dims, dtype=np.int64)  # raw codes before any input
        for layer in graph.layers:
            acc_rest = engine.conv2d_raw(rest, layer.weights, layer.stride, layer.padding)
            acc_rest += pad_correction(layer)
            y_rest, _ = engine.requantize_fixed(acc_rest, layer, bw)
            self.blocks.append(
                NeuronBlockState(acc=acc_rest, sent=y_rest.copy(), last_y=y_rest.copy())
            )
            rest = y_rest
        # inbox[k] holds what stage k-1 (encoder for k=0) emitted last timestep
        self.inboxes: list[SpikeBatch | None] = [None] * len(graph.layers)
        self.output_sum = rest.copy()  # downstream reconstruction of the last layer
        self.t = 0
        self.neuron_updates = 0  # total neuron evaluations, for invariant sampling

    def quiescent(self) -> bool:
        """True when no spikes are in flight and no layer needs draining."""
        return all(b is None or len(b) == 0 for b in self.inboxes) and not any(
            blk.dirty for blk in self.blocks
        )


def step_pipeline(
    state: PipelineState,
    frame_q: QuantTensor | None,
    executor: ThreadPoolExecutor | None = None,
) -> StepOutcome:
    """Advance the pipeline one timestep.

    Every layer consumes the batch its predecessor emitted on the *previous*
    timestep (barrier synchronization), then the encoder's emission for this
    timestep is queued for layer 0.  Layers with an empty inbox and no drain
    debt are skipped — a provable no-op given resting-state initialization.
    The final layer's emission is folded into the output running sum.
    """
    graph = state.graph
    bw = graph.bitwidths
    t = state.t
    enc_batch = state.encoder.encode(frame_q, t) if frame_q is not None else None
    n = len(graph.layers)

    def process(k: int) -> tuple[SpikeBatch | None, int, int, int, int]:
        inbox = state.inboxes[k]
        block = state.blocks[k]
        has_input = inbox is not None and len(inbox) > 0
        if not has_input and not block.dirty:
            return None, 0, 0, 0, 0
        synops = scatter_spikes(inbox, graph.layers[k], block, bw) if has_input else 0
        sat_before = block.saturations
        emitted = neuron_step(block, graph.layers[k], t, k, bw)
        return emitted, synops, len(emitted), block.saturations - sat_before, block.acc.size

    if executor is None:
        results = [process(k) for k in range(n)]
    else:
        results = list(executor.map(process, range(n)))
    state.neuron_updates += sum(r[4] for r in results)

    emissions = [r[0] for r in results]
    output_batch = emissions[-1]
    if output_batch is not None and len(output_batch):
        state.output_sum.reshape(-1)[output_batch.neurons] += output_batch.payloads

    state.inboxes = [enc_batch] + emissions[:-1]
    state.t += 1
    return StepOutcome(
        timestep=t,
        encoder_spikes=len(enc_batch) if enc_batch is not None else 0,
        layer_spikes=[r[2] for r in results],
        layer_synops=[r[1] for r in results],
        layer_saturations=[r[3] for r in results],
        output_batch=output_batch,
    )


@dataclass
class RuntimeTrace:
    """Per-timestep, per-stage activity counters (stage -1 is the encoder)."""

    n_layers: int
    n_frames: int
    steps: np.ndarray
    origins: np.ndarray
    spikes: np.ndarray
    synops: np.ndarray
    saturations: np.ndarray

    @property
    def n_steps(self) -> int:
        return int(self.steps.max()) + 1 if self.steps.size else 0

    def total_spikes(self, include_encoder: bool = True) -> int:
        if include_encoder:
            return int(self.spikes.sum())
        return int(self.spikes[self.origins >= 0].sum())

    def total_synops(self) -> int:
        return int(self.synops.sum())

    def spikes_per_frame(self, include_encoder: bool = True) -> float:
        return self.total_spikes(include_encoder) / self.n_frames

    def synops_per_frame(self) -> float:
        return self.total_synops() / self.n_frames

    def per_layer_totals(self) -> dict[int, tuple[int, int, int]]:
        """origin -> (spikes, synops, saturations) summed over all timesteps."""
        totals: dict[int, tuple[int, int, int]] = {}
        for origin in range(-1, self.n_layers):
            mask = self.origins == origin
            totals[origin] = (
                int(self.spikes[mask].sum()),
                int(self.synops[mask].sum()),
                int(self.saturations[mask].sum()),
            )
        return totals


@dataclass
class RunResult:
    """Everything a full sequence replay produced."""

    outputs: list[np.ndarray]  # dequantized float32 output per frame, latency-aligned
    outputs_int: list[np.ndarray]  # integer output codes per frame (int64)
    trace: RuntimeTrace
    state: PipelineState
    activations: list[list[np.ndarray]] | None = None  # [frame][layer] int64 codes
    spike_log: list[SpikeBatch] | None = None


def run_sequence(
    graph: SDNNGraph,
    frames: list[np.ndarray] | np.ndarray,
    parallel: bool = False,
    collect_activations: bool = False,
    collect_spikes: bool = False,
    max_drain_steps: int = 4096,
) -> RunResult:
    """Feed a frame sequence through the pipeline and gather aligned outputs.

    Frames may be float arrays (quantized here with the graph's input
    parameters) or pre-quantized QuantTensors.  The run covers
    len(frames) + depth timesteps so the last frame's output emerges; the
    input holds its final value for those trailing steps and beyond, so the
    encoder and every layer keep draining any payload-clamp residue until the
    whole pipeline is quiescent.  Frame t's output is the running sum right
    after timestep t + depth, dequantized with the output parameters.
    """
    if isinstance(frames, np.ndarray) and frames.ndim == 4:
        frames = list(frames)
    frame_qs: list[QuantTensor] = []
    for f in frames:
        if isinstance(f, QuantTensor):
            frame_qs.append(f)
        else:
            frame_qs.append(quantize_tensor(np.asarray(f), graph.input_qparams))

    state = PipelineState(graph)
    depth = graph.depth
    n = len(frame_qs)
    out_qp = graph.output_qparams

    rows: list[tuple[int, int, int, int, int]] = []  # (step, origin, spikes, synops, sats)
    outputs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    outputs_int: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    activations: list[list[np.ndarray]] | None = None
    if collect_activations:
        activations = [[None] * depth for _ in range(n)]  # type: ignore[list-item]
    spike_log: list[SpikeBatch] | None = [] if collect_spikes else None

    executor = ThreadPoolExecutor(max_workers=depth) if parallel else None
    try:
        total_steps = n + depth
        s = 0
        while s < total_steps or not state.quiescent():
            if s >= total_steps + max_drain_steps:
                raise RuntimeError(
                    f"pipeline failed to drain within {max_drain_steps} extra steps"
                )
            frame_q = frame_qs[s] if s < n else (frame_qs[-1] if frame_qs else None)
            outcome = step_pipeline(state, frame_q, executor)
            rows.append((s, -1, outcome.encoder_spikes, 0, 0))
            for k in range(depth):
                rows.append(
                    (s, k, outcome.layer_spikes[k], outcome.layer_synops[k],
                     outcome.layer_saturations[k])
                )
            if spike_log is not None:
                if outcome.encoder_spikes:
                    # encoder batch now sits in inbox[0]
                    spike_log.append(state.inboxes[0])
                for k in range(depth - 1):
                    b = state.inboxes[k + 1]
                    if b is not None and len(b):
                        spike_log.append(b)
                if outcome.output_batch is not None and len(outcome.output_batch):
                    spike_log.append(outcome.output_batch)
            t_out = s - depth
            if 0 <= t_out < n:
                codes = state.output_sum.copy()
                outputs_int[t_out] = codes
                outputs[t_out] = (
                    out_qp.scale * (codes.astype(np.float64) - out_qp.zero_point)
                ).astype(np.float32)
            if activations is not None:
                for k in range(depth):
                    t_frame = s - k - 1
                    if 0 <= t_frame < n:
                        activations[t_frame][k] = state.blocks[k].sent.copy()
            s += 1
    finally:
        if executor is not None:
            executor.shutdown()

    row_arr = np.asarray(rows, dtype=np.int64).reshape(-1, 5)
    trace = RuntimeTrace(
        n_layers=depth,
        n_frames=n,
        steps=row_arr[:, 0],
        origins=row_arr[:, 1],
        spikes=row_arr[:, 2],
        synops=row_arr[:, 3],
        saturations=row_arr[:, 4],
    )
    return RunResult(outputs, outputs_int, trace, state, activations, spike_log)
