"""Conversion of a quantized conv model into a sigma-delta spiking graph.

The converted graph is integer-only: each layer carries signed-8 weights, a
folded integer bias, a fixed-point requantizer (24-bit multiplier plus right
shift) that absorbs the scale ratio (s_in * s_w) / s_out, and a spike
threshold.  Zero-points are folded so that at run time the layer sees raw
integer codes, never centered values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fixedpoint import BitwidthConfig, DEFAULT_BITWIDTHS, signed_limits
from .model import ConvLayerSpec, ModelIR, conv_output_hw
from .quantization import QuantParams

SCALE_BITS = 24
MAX_SCALE = (1 << SCALE_BITS) - 1
MAX_SHIFT = 48


class ConversionError(ValueError):
    """A model cannot be represented in the fixed-point graph."""


@dataclass(frozen=True)
class Requantizer:
    """Fixed-point multiplier approximating a real ratio.

    (acc * scale) >> scale_exp  ~=  acc * real_ratio

    scale is an unsigned 24-bit integer, scale_exp a right-shift amount.
    real_ratio keeps the exact float ratio for diagnostics.
    """

    scale: int
    scale_exp: int
    real_ratio: float

    def __post_init__(self) -> None:
        if not (0 < self.scale <= MAX_SCALE):
            raise ValueError(f"scale must be in (0, {MAX_SCALE}], got {self.scale}")
        if not (0 <= self.scale_exp <= MAX_SHIFT):
            raise ValueError(f"scale_exp must be in [0, {MAX_SHIFT}], got {self.scale_exp}")

    @property
    def fixed_ratio(self) -> float:
        """The ratio actually realized: scale / 2**scale_exp."""
        return math.ldexp(self.scale, -self.scale_exp)

    @property
    def relative_error(self) -> float:
        """Relative deviation of the fixed ratio from the real ratio."""
        return abs(self.fixed_ratio - self.real_ratio) / self.real_ratio


def derive_requantizer(ratio: float) -> Requantizer:
    """Best 24-bit scale / shift pair for a positive real ratio.

    Chooses the largest shift (up to 48) whose rounded mantissa still fits in
    24 bits, which normalizes the mantissa into [2^23, 2^24) whenever the
    shift cap is not binding — the finest representation the width allows.
    """
    if not (math.isfinite(ratio) and ratio > 0.0):
        raise ConversionError(f"requantizer ratio must be positive and finite, got {ratio}")
    if ratio > MAX_SCALE:
        raise ConversionError(f"ratio {ratio} too large for a {SCALE_BITS}-bit multiplier")
    # frexp: ratio = m * 2^e with m in [0.5, 1), so shift 24 - e lands the
    # mantissa in [2^23, 2^24); ldexp scales by a power of two exactly.
    exp = min(MAX_SHIFT, SCALE_BITS - math.frexp(ratio)[1])
    scale = round(math.ldexp(ratio, exp))
    if scale > MAX_SCALE:  # rounded up to exactly 2^24
        exp -= 1
        scale = round(math.ldexp(ratio, exp))
    if scale == 0:
        raise ConversionError(f"ratio {ratio} underflows a {MAX_SHIFT}-bit shift")
    return Requantizer(scale, exp, ratio)


def fold_bias(layer: ConvLayerSpec, config: BitwidthConfig = DEFAULT_BITWIDTHS) -> np.ndarray:
    """Integer bias per output channel, in accumulator units.

    round_half_even(bias / (s_in * s_w)) - z_in * sum(w_q over c, kh, kw)

    The first term re-expresses the float bias in accumulator units; the
    second removes the input zero-point contribution of a fully-populated
    kernel window (border windows are corrected by pad_correction).
    """
    s_in = layer.in_qparams.scale
    s_w = layer.weights.qparams.scale
    z_in = layer.in_qparams.zero_point
    kernel_sums = layer.weights.data.astype(np.int64).sum(axis=(1, 2, 3))
    bias_acc = np.rint(layer.bias.astype(np.float64) / (s_in * s_w)).astype(np.int64)
    folded = bias_acc - z_in * kernel_sums
    lo, hi = signed_limits(config.acc_bits)
    if folded.size and (folded.min() < lo or folded.max() > hi):
        raise ConversionError(
            f"folded bias {int(folded[np.abs(folded).argmax()])} outside "
            f"signed {config.acc_bits}-bit accumulator range"
        )
    return folded


def pad_correction(layer: "SDNNLayer") -> np.ndarray:
    """Zero-point make-up term for kernel windows that overlap padding.

    fold_bias subtracts z_in * (full kernel sum) everywhere, but a window that
    hangs over the border only ever sees real input on its valid taps; the
    padded taps would have contributed z_in * w had the input been extended
    with the zero-point code.  The correction — z_in times the sum of weights
    over the *padding* taps at each output position — is input-independent, so
    it lives in the resting accumulator state.  Zero for padding=0 or z_in=0.
    """
    k, s, p = layer.kernel, layer.stride, layer.padding
    o_out, oh, ow = layer.out_dims
    c_in, h_in, w_in = layer.in_dims
    z_in = layer.in_zero_point
    if p == 0 or z_in == 0:
        return np.zeros((o_out, oh, ow), dtype=np.int64)
    w = layer.weights.astype(np.int64)
    kernel_sum = w.sum(axis=(1, 2, 3))  # (O,)
    # Sum of weights over taps that land on real input, per output position:
    # a convolution of an all-ones input with the kernel.
    ones = np.ones((c_in, h_in, w_in), dtype=np.int64)
    ones_p = np.pad(ones, ((0, 0), (p, p), (p, p)))
    valid = np.zeros((o_out, oh, ow), dtype=np.int64)
    for kh in range(k):
        for kw in range(k):
            window = ones_p[:, kh : kh + (oh - 1) * s + 1 : s, kw : kw + (ow - 1) * s + 1 : s]
            valid += np.einsum("cij,oc->oij", window, w[:, :, kh, kw])
    return z_in * (kernel_sum[:, None, None] - valid)


@dataclass
class SDNNLayer:
    """One sigma-delta layer of the converted graph (integer-only)."""

    weights: np.ndarray  # int8 (O, C, K, K)
    bias_int: np.ndarray  # int64 (O,), accumulator units
    requant: Requantizer
    threshold: int
    stride: int
    padding: int
    activation: str
    in_zero_point: int
    out_qparams: QuantParams
    in_dims: tuple[int, int, int]  # (C, H, W)
    out_dims: tuple[int, int, int]  # (O, OH, OW)

    def __post_init__(self) -> None:
        if self.weights.dtype != np.int8:
            raise TypeError(f"weights must be int8, got {self.weights.dtype}")
        if self.threshold < 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        if self.bias_int.shape != (self.out_dims[0],):
            raise ValueError(
                f"bias_int shape {self.bias_int.shape} does not match {self.out_dims[0]} filters"
            )

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]


@dataclass
class SDNNGraph:
    """Converted pipeline: delta encoder parameters plus SDNN layers."""

    layers: list[SDNNLayer]
    input_qparams: QuantParams
    encoder_threshold: int
    bitwidths: BitwidthConfig = DEFAULT_BITWIDTHS
    version: int = 1

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("graph must have at least one layer")
        if self.encoder_threshold < 0:
            raise ValueError(f"encoder threshold must be >= 0, got {self.encoder_threshold}")

    @property
    def input_dims(self) -> tuple[int, int, int]:
        return self.layers[0].in_dims

    @property
    def output_qparams(self) -> QuantParams:
        return self.layers[-1].out_qparams

    @property
    def depth(self) -> int:
        """Pipeline latency in timesteps (one per layer)."""
        return len(self.layers)


def convert(
    model: ModelIR,
    layer_thresholds: list[int] | None = None,
    encoder_threshold: int = 0,
    bitwidths: BitwidthConfig = DEFAULT_BITWIDTHS,
) -> SDNNGraph:
    """Build the sigma-delta graph for a quantized model.

    layer_thresholds gives each conv layer's spike threshold (default all
    zero, the lossless setting).  Raises ConversionError when a folded bias or
    requantizer cannot be represented.
    """
    if layer_thresholds is None:
        layer_thresholds = [0] * len(model.layers)
    if len(layer_thresholds) != len(model.layers):
        raise ConversionError(
            f"{len(layer_thresholds)} thresholds for {len(model.layers)} layers"
        )
    layers: list[SDNNLayer] = []
    in_dims = model.input_dims
    for spec, dims, v_th in zip(model.layers, model.layer_dims(), layer_thresholds):
        ratio = spec.in_qparams.scale * spec.weights.qparams.scale / spec.out_qparams.scale
        layers.append(
            SDNNLayer(
                weights=spec.weights.data,
                bias_int=fold_bias(spec, bitwidths),
                requant=derive_requantizer(ratio),
                threshold=int(v_th),
                stride=spec.stride,
                padding=spec.padding,
                activation=spec.activation,
                in_zero_point=spec.in_qparams.zero_point,
                out_qparams=spec.out_qparams,
                in_dims=in_dims,
                out_dims=dims,
            )
        )
        in_dims = dims
    return SDNNGraph(layers, model.input_qparams, int(encoder_threshold), bitwidths)


@dataclass
class ConversionReport:
    """Result of replaying frames through both engines, integer-exact."""

    ok: bool
    frames_checked: int
    max_abs_deviation: int
    first_mismatch: tuple[int, int, int] | None  # (layer, flat neuron, timestep)
    requant_errors: list[float]  # per-layer relative error of the fixed ratio

    def __str__(self) -> str:
        if self.ok:
            return (
                f"exact on {self.frames_checked} frames; max requantizer rel err "
                f"{max(self.requant_errors):.3e}"
            )
        layer, neuron, t = self.first_mismatch  # type: ignore[misc]
        return (
            f"MISMATCH: max |deviation| {self.max_abs_deviation} over "
            f"{self.frames_checked} frames; first at layer {layer}, neuron {neuron}, "
            f"timestep {t}"
        )


def validate_conversion(
    graph: SDNNGraph, model: ModelIR, frames: list[np.ndarray]
) -> ConversionReport:
    """Replay frames through the spiking runtime and the dense fixed-point
    engine and compare final-layer integer activations, latency-aligned.

    Uses the graph's own thresholds; with all thresholds zero any nonzero
    deviation is a conversion bug.  The first mismatching (layer, neuron,
    timestep) is identified by re-walking per-layer reconstructions.
    """
    from . import engine, runtime  # deferred: engine/runtime import this module

    if not frames:
        raise ValueError("validate_conversion needs at least one frame")

    result = runtime.run_sequence(graph, frames, collect_activations=True)
    requant_errors = [layer.requant.relative_error for layer in graph.layers]

    max_dev = 0
    first: tuple[int, int, int] | None = None
    from .quantization import quantize_tensor

    for t, frame in enumerate(frames):
        frame_q = quantize_tensor(frame, graph.input_qparams)
        ref = engine.run_reference(model, frame_q, mode="fixed_point", bitwidths=graph.bitwidths)
        for k in range(len(graph.layers)):
            dev = result.activations[t][k].astype(np.int64) - ref.activations[k].astype(np.int64)
            bad = np.flatnonzero(dev.ravel())
            if bad.size:
                max_dev = max(max_dev, int(np.abs(dev).max()))
                if first is None:
                    # the runtime reached this layer's frame-t state at step t + k + 1
                    first = (k, int(bad[0]), t + k + 1)
                break
    return ConversionReport(
        ok=first is None,
        frames_checked=len(frames),
        max_abs_deviation=max_dev,
        first_mismatch=first,
        requant_errors=requant_errors,
    )
