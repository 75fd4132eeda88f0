"""Command-line interface.

Subcommands cover the full flow: gen (synthetic model + video), quantize,
convert, run-ref (dense engines), run-sdnn (spiking runtime), compare
(bit-exactness check), sweep (threshold trade-off report), decode (grid boxes
to CSV), report (re-render a sweep CSV).  Set SDNN_LOG=debug|info|warning to
control stderr logging.  Exit codes: 0 success, 1 comparison/validation
failure, 2 bad input or usage.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__, detect, engine, profiling, runtime, serialization
from .convert import convert
from .model import ModelIR
from .profiling import sweep_thresholds_for
from .quantization import quantize_tensor
from .synthetic import gen_float_model, gen_video, parse_layer_shapes

log = logging.getLogger("sdnn.cli")


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"dims must be CxHxW, got {text!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def _parse_anchors(text: str) -> tuple[tuple[float, float], ...]:
    anchors = []
    for item in text.split(","):
        parts = item.lower().split("x")
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"anchor must be WxH, got {item!r}")
        anchors.append((float(parts[0]), float(parts[1])))
    return tuple(anchors)


def _parse_stage_range(text: str, depth: int) -> list[int]:
    """Sweep stages: 'A..B' (inclusive) or comma list; default full range."""
    if text == "all":
        return list(range(depth + 1))
    if ".." in text:
        lo, _, hi = text.partition("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(p) for p in text.split(",")]


def _load_quantized(path: str) -> ModelIR:
    loaded = serialization.load_model(path)
    if not isinstance(loaded, ModelIR):
        raise serialization.FileFormatError(
            f"{path} holds a float model; run 'sdnn quantize' on it first"
        )
    return loaded


def _cmd_gen(args: argparse.Namespace) -> int:
    shapes = parse_layer_shapes(args.layers)
    layers = gen_float_model(shapes, args.input_dims, args.seed, args.final_activation)
    frames, _track = gen_video(
        args.input_dims,
        args.frames,
        args.seed + 1,
        motion_rate=args.motion_rate,
        blob_size=args.blob_size,
        background_offset=args.background_offset,
    )
    serialization.save_model(layers, args.out_model, args.input_dims)
    serialization.save_frames(frames, args.out_frames)
    log.info("wrote float model %s and %d frames %s", args.out_model, len(frames), args.out_frames)
    print(f"model: {args.out_model} ({len(layers)} layers)")
    print(f"frames: {args.out_frames} ({len(frames)} x {'x'.join(map(str, args.input_dims))})")
    return 0


def _cmd_quantize(args: argparse.Namespace) -> int:
    loaded = serialization.load_model(args.model)
    if isinstance(loaded, ModelIR):
        raise serialization.FileFormatError(f"{args.model} is already quantized")
    layers, input_dims = loaded
    frames = serialization.load_frames(args.frames)
    from .model import quantize_model

    model = quantize_model(layers, frames, input_dims)
    serialization.save_model(model, args.out)
    qp = model.input_qparams
    print(f"quantized {len(model.layers)} layers -> {args.out}")
    print(f"input encoding: scale={qp.scale!r} zero_point={qp.zero_point} ({qp.dtype})")
    return 0


def _cmd_convert(args: argparse.Namespace) -> int:
    model = _load_quantized(args.model)
    depth = len(model.layers)
    if args.first_n is not None:
        encoder_th, thresholds = sweep_thresholds_for(args.first_n, depth)
    else:
        thresholds = [int(t) for t in args.thresholds.split(",")] if args.thresholds else None
        encoder_th = args.encoder_threshold
    graph = convert(model, thresholds, encoder_th)
    serialization.save_graph(graph, args.out)
    for i, layer in enumerate(graph.layers):
        log.info(
            "layer %d: scale=%d exp=%d rel_err=%.3e threshold=%d",
            i, layer.requant.scale, layer.requant.scale_exp,
            layer.requant.relative_error, layer.threshold,
        )
    print(f"graph: {args.out} ({depth} layers, encoder threshold {graph.encoder_threshold})")
    return 0


def _cmd_run_ref(args: argparse.Namespace) -> int:
    model = _load_quantized(args.model)
    frames = serialization.load_frames(args.frames)
    mode = "fixed_point" if args.mode == "fixed" else "float_scale"
    outputs = []
    qp = model.output_qparams
    for frame in frames:
        frame_q = quantize_tensor(frame, model.input_qparams)
        result = engine.run_reference(model, frame_q, mode)
        outputs.append(
            (qp.scale * (result.output.data.astype(np.float64) - qp.zero_point)).astype(np.float32)
        )
    serialization.save_frames(outputs, args.out)
    print(f"ran {len(frames)} frames ({mode}) -> {args.out}")
    print(f"dense macs/frame: {engine.model_macs(model)}")
    return 0


def _cmd_run_sdnn(args: argparse.Namespace) -> int:
    graph = serialization.load_graph(args.graph)
    frames = serialization.load_frames(args.frames)
    result = runtime.run_sequence(
        graph, frames, parallel=args.parallel, collect_spikes=args.trace is not None
    )
    serialization.save_frames(result.outputs, args.out)
    if args.trace is not None:
        serialization.save_spike_trace(result.spike_log, args.trace)
        print(f"spike trace: {args.trace} ({len(result.spike_log)} batches)")
    trace = result.trace
    print(f"ran {len(frames)} frames over {trace.n_steps} timesteps -> {args.out}")
    print(f"spikes/frame: {trace.spikes_per_frame()!r}")
    print(f"synops/frame: {trace.synops_per_frame()!r}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    model = _load_quantized(args.model)
    frames = serialization.load_frames(args.frames)
    graph = serialization.load_graph(args.graph) if args.graph else convert(model)
    from .convert import validate_conversion

    report = validate_conversion(graph, model, frames)
    print(str(report))
    return 0 if report.ok else 1


def _cmd_sweep(args: argparse.Namespace) -> int:
    model = _load_quantized(args.model)
    frames = serialization.load_frames(args.frames)
    depth = len(model.layers)
    n_values = _parse_stage_range(args.n, depth)
    energy_model = profiling.load_energy_model(args.energy_config) if args.energy_config else None
    layout = None
    if args.metric in ("f1", "ap") and args.anchors:
        out_dims = model.layer_dims()[-1]
        layout = detect.GridLayout.for_output(out_dims, args.boxes, _parse_anchors(args.anchors))
    result = profiling.threshold_sweep(
        model,
        frames,
        n_values,
        metric=args.metric,
        energy_model=energy_model,
        layout=layout,
        conf_threshold=args.conf,
        parallel=args.parallel,
    )
    profiling.emit_report(result, args.out, args.output_format)
    print(f"sweep over n={n_values} -> {args.out} ({args.output_format})")
    return 0


def _cmd_decode(args: argparse.Namespace) -> int:
    outputs = serialization.load_frames(args.outputs)
    anchors = _parse_anchors(args.anchors) if args.anchors else ()
    layout = detect.GridLayout.for_output(outputs[0].shape, args.boxes, anchors)
    preds = [detect.decode_grid(o, layout, args.conf) for o in outputs]
    detect.write_detections_csv(preds, args.out)
    print(f"decoded {sum(len(p) for p in preds)} boxes from {len(outputs)} frames -> {args.out}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    result = profiling.read_report_csv(args.input)
    text = profiling.render_report(result, args.output_format)
    if args.out:
        serialization._atomic_write(args.out, text.encode("utf-8"))
        print(f"report -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdnn",
        description="Convert quantized CNNs to sigma-delta spiking graphs and emulate them bit-exactly.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic float model and moving-blob video")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", default="8:3:2:1,12:3:1:1,27:1:1:0",
                   help="comma list of out:kernel:stride:padding")
    p.add_argument("--input-dims", type=_parse_dims, default=(3, 16, 16), metavar="CxHxW")
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--motion-rate", type=float, default=1.0)
    p.add_argument("--blob-size", type=int, default=3)
    p.add_argument("--background-offset", type=float, default=0.0)
    p.add_argument("--final-activation", choices=("none", "relu"), default="none")
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-frames", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("quantize", help="calibrate a float model on frames and quantize it")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("convert", help="build the sigma-delta spiking graph")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds", default=None, help="comma list, one per layer (default zeros)")
    p.add_argument("--encoder-threshold", type=int, default=0)
    p.add_argument("--first-n", type=int, default=None,
                   help="threshold the encoder plus the first N-1 layers at 1")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("run-ref", help="run frames densely through the reference engine")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--mode", choices=("fixed", "float"), default="fixed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_run_ref)

    p = sub.add_parser("run-sdnn", help="replay frames on the event-driven runtime")
    p.add_argument("--graph", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="also write the spike trace (.sst)")
    p.add_argument("--parallel", action="store_true", help="update layers in worker threads")
    p.set_defaults(func=_cmd_run_sdnn)

    p = sub.add_parser("compare", help="check the runtime against the dense engine, exactly")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--graph", default=None, help="default: lossless conversion of --model")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("sweep", help="threshold sweep: accuracy vs activity vs energy")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--n", default="all", help="stages: 'all', 'A..B', or comma list")
    p.add_argument("--metric", choices=("deviation", "f1", "ap"), default="deviation")
    p.add_argument("--energy-config", default=None)
    p.add_argument("--conf", type=float, default=0.25)
    p.add_argument("--boxes", type=int, default=3)
    p.add_argument("--anchors", default=None, help="comma list of WxH in cell units")
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--output-format", choices=("csv", "structured-text"), default="csv")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("decode", help="decode grid outputs into detection boxes")
    p.add_argument("--outputs", required=True, help="frame stack written by run-ref/run-sdnn")
    p.add_argument("--boxes", type=int, default=3)
    p.add_argument("--anchors", default=None, help="comma list of WxH in cell units")
    p.add_argument("--conf", type=float, default=0.25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("report", help="re-render a sweep CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None, help="default: stdout")
    p.add_argument("--output-format", choices=("csv", "structured-text"),
                   default="structured-text")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("SDNN_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, tests use the API
        log.debug("traceback", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
