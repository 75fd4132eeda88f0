"""Activity counting, energy/latency estimation, and threshold sweeps.

The cost model is a three-term linear estimate per frame:

    energy = static_power * timestep + synops * e_synop + spikes * e_spike

with one pipeline timestep per layer, so latency = n_layers * timestep and
throughput = 1 / timestep.  Energy-delay product is power * timestep *
latency, i.e. energy * latency, in joule-seconds.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields

import numpy as np

from . import detect as detect_mod
from . import engine, runtime
from .convert import SDNNGraph, convert
from .model import ModelIR
from .quantization import quantize_tensor
from .runtime import RuntimeTrace
from .serialization import _atomic_write


@dataclass(frozen=True)
class EnergyModel:
    """Per-event and static costs of the modeled substrate."""

    timestep_s: float
    static_power_w: float
    energy_per_synop_j: float
    energy_per_spike_j: float

    def __post_init__(self) -> None:
        if self.timestep_s <= 0:
            raise ValueError(f"timestep_s must be positive, got {self.timestep_s}")
        for name in ("static_power_w", "energy_per_synop_j", "energy_per_spike_j"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def load_energy_model(path: str) -> EnergyModel:
    """Parse a key=value config file ('#' starts a comment)."""
    values: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            try:
                values[key.strip()] = float(value.strip())
            except ValueError:
                raise ValueError(f"{path}:{lineno}: {value.strip()!r} is not a number") from None
    expected = {f.name for f in fields(EnergyModel)}
    missing = expected - values.keys()
    if missing:
        raise ValueError(f"{path}: missing keys: {', '.join(sorted(missing))}")
    extra = values.keys() - expected
    if extra:
        raise ValueError(f"{path}: unknown keys: {', '.join(sorted(extra))}")
    return EnergyModel(**values)


@dataclass(frozen=True)
class CostEstimate:
    energy_per_frame_j: float
    latency_s: float
    fps: float
    power_w: float
    edp_js: float


def estimate_cost(trace: RuntimeTrace, n_layers: int, em: EnergyModel) -> CostEstimate:
    """Cost of the traced activity under the energy model."""
    synops = trace.synops_per_frame()
    spikes = trace.spikes_per_frame()
    energy = (
        em.static_power_w * em.timestep_s
        + synops * em.energy_per_synop_j
        + spikes * em.energy_per_spike_j
    )
    latency = n_layers * em.timestep_s
    power = energy / em.timestep_s
    return CostEstimate(
        energy_per_frame_j=energy,
        latency_s=latency,
        fps=1.0 / em.timestep_s,
        power_w=power,
        edp_js=power * em.timestep_s * latency,
    )


def synop_ratio(trace: RuntimeTrace, model: ModelIR) -> float:
    """Event-driven weight applications per frame over dense MACs per frame."""
    return trace.synops_per_frame() / engine.model_macs(model)


def sweep_thresholds_for(n: int, depth: int) -> tuple[int, list[int]]:
    """Threshold assignment for sweep stage n: (encoder_threshold, layer list).

    n = 0 leaves everything at 0 (lossless); n >= 1 raises the delta encoder
    plus the first n-1 conv layers to threshold 1.  n may not exceed depth.
    """
    if not (0 <= n <= depth):
        raise ValueError(f"sweep stage must be in [0, {depth}], got {n}")
    if n == 0:
        return 0, [0] * depth
    return 1, [1] * (n - 1) + [0] * (depth - n + 1)


@dataclass
class SweepRow:
    n: int
    metric: str
    value: float
    spikes_per_frame: float
    synops_per_frame: float
    synop_ratio: float
    energy_per_frame_j: float
    latency_s: float
    fps: float
    edp_js: float


SWEEP_COLUMNS = [f.name for f in fields(SweepRow)]


@dataclass
class SweepResult:
    rows: list[SweepRow]


def _deviation(outputs: list[np.ndarray], refs: list[np.ndarray]) -> float:
    """Mean absolute deviation of dequantized outputs from the dense reference."""
    total = 0.0
    count = 0
    for out, ref in zip(outputs, refs):
        total += float(np.abs(out.astype(np.float64) - ref.astype(np.float64)).sum())
        count += out.size
    return total / count


def threshold_sweep(
    model: ModelIR,
    frames: list[np.ndarray] | np.ndarray,
    n_values: list[int] | None = None,
    metric: str = "deviation",
    energy_model: EnergyModel | None = None,
    layout: "detect_mod.GridLayout | None" = None,
    conf_threshold: float = 0.25,
    parallel: bool = False,
) -> SweepResult:
    """Accuracy/activity trade-off over progressively thresholded graphs.

    For each n, thresholds follow sweep_thresholds_for, the video is replayed
    on the spiking runtime, and the chosen metric is computed against the
    dense fixed-point reference: "deviation" (mean abs difference of the
    dequantized outputs, 0 at n=0), or "f1"/"ap" where boxes decoded from the
    reference outputs serve as ground truth.  Energy columns are NaN unless
    an energy model is given.
    """
    if isinstance(frames, np.ndarray) and frames.ndim == 4:
        frames = list(frames)
    depth = len(model.layers)
    if n_values is None:
        n_values = list(range(depth + 1))
    if metric not in ("deviation", "f1", "ap"):
        raise ValueError(f"metric must be deviation, f1 or ap, got {metric!r}")

    base_graph = convert(model)
    dense_macs = engine.model_macs(model)
    refs: list[np.ndarray] = []
    for frame in frames:
        frame_q = quantize_tensor(np.asarray(frame), model.input_qparams)
        ref = engine.run_reference(model, frame_q, "fixed_point", graph=base_graph)
        qp = model.output_qparams
        refs.append(
            (qp.scale * (ref.output.data.astype(np.float64) - qp.zero_point)).astype(np.float32)
        )

    truths = None
    if metric in ("f1", "ap"):
        if layout is None:
            layout = detect_mod.GridLayout.for_output(refs[0].shape)
        truths = [detect_mod.decode_grid(r, layout, conf_threshold) for r in refs]

    rows: list[SweepRow] = []
    for n in n_values:
        enc_th, layer_ths = sweep_thresholds_for(n, depth)
        graph = convert(model, layer_ths, enc_th, base_graph.bitwidths)
        result = runtime.run_sequence(graph, frames, parallel=parallel)
        if metric == "deviation":
            value = _deviation(result.outputs, refs)
        else:
            preds = [detect_mod.decode_grid(o, layout, conf_threshold) for o in result.outputs]
            score = detect_mod.score_detections(preds, truths)
            value = score.f1 if metric == "f1" else score.ap
        spikes_pf = result.trace.spikes_per_frame()
        synops_pf = result.trace.synops_per_frame()
        if energy_model is not None:
            cost = estimate_cost(result.trace, depth, energy_model)
            energy, latency, fps, edp = (
                cost.energy_per_frame_j, cost.latency_s, cost.fps, cost.edp_js,
            )
        else:
            energy = latency = fps = edp = math.nan
        rows.append(
            SweepRow(
                n=n,
                metric=metric,
                value=value,
                spikes_per_frame=spikes_pf,
                synops_per_frame=synops_pf,
                synop_ratio=synops_pf / dense_macs,
                energy_per_frame_j=energy,
                latency_s=latency,
                fps=fps,
                edp_js=edp,
            )
        )
    return SweepResult(rows)


def render_report(result: SweepResult, fmt: str = "csv") -> str:
    """Serialize a sweep as CSV or an aligned structured-text table."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in result.rows:
            writer.writerow([getattr(row, c) for c in SWEEP_COLUMNS])
        return buf.getvalue()
    if fmt == "structured-text":
        lines = [f"threshold sweep ({len(result.rows)} settings)", ""]
        for row in result.rows:
            lines.append(f"[n={row.n}]")
            for col in SWEEP_COLUMNS[1:]:
                val = getattr(row, col)
                lines.append(f"{col} = {val}")
            lines.append("")
        return "\n".join(lines)
    raise ValueError(f"format must be csv or structured-text, got {fmt!r}")


def emit_report(result: SweepResult, path: str, fmt: str = "csv") -> None:
    _atomic_write(path, render_report(result, fmt).encode("utf-8"))


def read_report_csv(path: str) -> SweepResult:
    """Load a sweep report back from its CSV form."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SWEEP_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = [
            SweepRow(
                n=int(rec["n"]),
                metric=rec["metric"],
                value=float(rec["value"]),
                spikes_per_frame=float(rec["spikes_per_frame"]),
                synops_per_frame=float(rec["synops_per_frame"]),
                synop_ratio=float(rec["synop_ratio"]),
                energy_per_frame_j=float(rec["energy_per_frame_j"]),
                latency_s=float(rec["latency_s"]),
                fps=float(rec["fps"]),
                edp_js=float(rec["edp_js"]),
            )
            for rec in reader
        ]
    return SweepResult(rows)
