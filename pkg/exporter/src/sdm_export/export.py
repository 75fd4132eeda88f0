"""Export a quantized torch conv chain to a portable ".sdm" model file.

The exporter only copies parameters out of the framework modules — integer
weights, float biases, and the affine quantization constants each layer
already carries — and never runs inference itself.  The calibration frame
stack supplies the input geometry the model document records, and lets the
exporter warn when calibration data falls outside the input quantizer's
representable range.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field

import torch

from .extract import UnsupportedModelError, extract_chain
from .sdm_format import FormatError, read_frame_stack, write_quantized_model

_QRANGE = {"uint8": (0, 255), "int8": (-128, 127)}


@dataclass(frozen=True)
class LayerSummary:
    """The quantization constants one exported layer carries."""

    weight_dims: tuple[int, int, int, int]  # (O, C, K, K)
    in_scale: float
    weight_scale: float
    out_scale: float
    in_zero_point: int
    out_zero_point: int
    activation: str


@dataclass(frozen=True)
class ExportReport:
    """What an export wrote: one summary row per layer, plus warnings."""

    out_path: str
    input_dims: tuple[int, int, int]
    n_calib_frames: int
    layers: list[LayerSummary]
    warnings: list[str] = field(default_factory=list)

    def __str__(self) -> str:
        c, h, w = self.input_dims
        lines = [
            f"exported {len(self.layers)} conv layers to {self.out_path}",
            f"calibration: {self.n_calib_frames} frames of {c}x{h}x{w}",
            f"{'layer':<6} {'weights':<14} {'act':<5} {'in_scale':<12} "
            f"{'w_scale':<12} {'out_scale':<12} {'in_zp':>5} {'out_zp':>6}",
        ]
        for i, row in enumerate(self.layers):
            dims = "x".join(str(d) for d in row.weight_dims)
            lines.append(
                f"{i:<6} {dims:<14} {row.activation:<5} {row.in_scale:<12.6g} "
                f"{row.weight_scale:<12.6g} {row.out_scale:<12.6g} "
                f"{row.in_zero_point:>5} {row.out_zero_point:>6}"
            )
        for w_msg in self.warnings:
            lines.append(f"warning: {w_msg}")
        return "\n".join(lines)


def export(model_path: str, calib_frames_path: str, out_path: str) -> ExportReport:
    """Read a serialized quantized model, write it as ".sdm", report what moved."""
    model = torch.load(model_path, map_location="cpu", weights_only=False)
    if not isinstance(model, torch.nn.Module):
        raise UnsupportedModelError(
            f"{model_path} holds a {type(model).__name__}, not a module"
        )
    # Extraction only reads parameters, so the train/eval flag is irrelevant;
    # .eval() would also trip over quantized modules whose unpickling skips
    # nn.Module's bookkeeping attributes.
    layers, warnings = extract_chain(model)

    frames = read_frame_stack(calib_frames_path)
    if not frames:
        raise FormatError(f"{calib_frames_path} holds no frames")
    dims = frames[0].shape
    if len(dims) != 3:
        raise FormatError(
            f"calibration frames must be (C, H, W), got shape {tuple(dims)}"
        )
    if any(f.shape != dims for f in frames):
        raise FormatError("calibration frames do not all share one shape")
    in_channels = int(layers[0].weights.shape[1])
    if dims[0] != in_channels:
        raise FormatError(
            f"calibration frames have {dims[0]} channels but the first conv "
            f"expects {in_channels}"
        )

    qmin, qmax = _QRANGE[layers[0].in_dtype]
    scale, zp = layers[0].in_scale, layers[0].in_zero_point
    lo, hi = scale * (qmin - zp), scale * (qmax - zp)
    seen_lo = min(float(f.min()) for f in frames)
    seen_hi = max(float(f.max()) for f in frames)
    # Values within half a step of the range edges clip no harder than
    # rounding already does, so only excursions beyond that are worth a flag.
    if seen_lo < lo - scale / 2 or seen_hi > hi + scale / 2:
        warnings = warnings + [
            f"calibration frames span [{seen_lo:.6g}, {seen_hi:.6g}] but the "
            f"input quantizer covers [{lo:.6g}, {hi:.6g}]; out-of-range values clip"
        ]

    input_dims = (int(dims[0]), int(dims[1]), int(dims[2]))
    write_quantized_model(layers, input_dims, out_path)

    with open(out_path, "r", encoding="utf-8") as fh:
        written = len(json.load(fh)["layers"])
    if written != len(layers):
        raise RuntimeError(
            f"wrote {written} layers but extracted {len(layers)}"
        )

    return ExportReport(
        out_path=out_path,
        input_dims=input_dims,
        n_calib_frames=len(frames),
        layers=[
            LayerSummary(
                weight_dims=tuple(int(d) for d in layer.weights.shape),
                in_scale=layer.in_scale,
                weight_scale=layer.weight_scale,
                out_scale=layer.out_scale,
                in_zero_point=layer.in_zero_point,
                out_zero_point=layer.out_zero_point,
                activation=layer.activation,
            )
            for layer in layers
        ],
        warnings=warnings,
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sdm-export",
        description="Export a quantized torch conv chain to an .sdm model file.",
    )
    parser.add_argument("model", help="serialized quantized model (torch.save)")
    parser.add_argument("frames", help="calibration frame stack (.sdt)")
    parser.add_argument("out", help="output model path (.sdm)")
    parser.add_argument(
        "--report",
        help="where to write the text report (default: <out>.report.txt)",
    )
    args = parser.parse_args(argv)

    try:
        report = export(args.model, args.frames, args.out)
    except (UnsupportedModelError, FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    text = str(report) + "\n"
    report_path = args.report or args.out + ".report.txt"
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    print(f"report written to {report_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
