"""File formats: models (.sdm), graphs (.sdg), frame stacks (.sdt), spike traces (.sst).

Models and graphs are JSON documents with base64-embedded little-endian
tensor blobs and a sha256 checksum; frame stacks and spike traces are compact
binary.  All writers are deterministic (no timestamps, sorted keys) and
atomic (temp file + rename), so identical inputs produce identical bytes.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import struct
import tempfile
from typing import Any, BinaryIO

import numpy as np

from .convert import Requantizer, SDNNGraph, SDNNLayer
from .fixedpoint import BitwidthConfig
from .model import ConvLayerSpec, FloatConvLayer, ModelIR
from .quantization import NUMPY_DTYPES, QuantParams, QuantTensor
from .runtime import SpikeBatch

MODEL_FORMAT = "sdnn-model"
GRAPH_FORMAT = "sdnn-graph"
SUPPORTED_MODEL_VERSIONS = (1,)
SUPPORTED_GRAPH_VERSIONS = (1,)

FRAME_MAGIC = b"SDT1"
TRACE_MAGIC = b"SST1"

# dtype codes of the tensor blob container
_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("i1"), 2: np.dtype("u1"), 3: np.dtype("<i4")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.int8): 1, np.dtype(np.uint8): 2, np.dtype(np.int32): 3}


class FileFormatError(ValueError):
    """A file is not a valid document of the expected format/version."""


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(arr: np.ndarray) -> bytes:
    """Pack an array as: u32 dtype code, u32 rank, u32 dims…, raw LE data."""
    key = np.dtype(arr.dtype)
    if key not in _DTYPE_TO_CODE:
        raise FileFormatError(f"tensor dtype {arr.dtype} has no container code")
    code = _DTYPE_TO_CODE[key]
    header = struct.pack("<II", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODE_TO_DTYPE[code]).tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Inverse of encode_tensor; returns (array, offset past the blob)."""
    try:
        code, rank = struct.unpack_from("<II", buf, offset)
        offset += 8
        if code not in _CODE_TO_DTYPE:
            raise FileFormatError(f"unknown tensor dtype code {code}")
        if rank > 8:
            raise FileFormatError(f"implausible tensor rank {rank}")
        dims = struct.unpack_from(f"<{rank}I", buf, offset)
        offset += 4 * rank
        dtype = _CODE_TO_DTYPE[code]
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(buf):
            raise FileFormatError("tensor blob truncated")
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(dims)
        offset += nbytes
    except struct.error as exc:
        raise FileFormatError(f"tensor blob truncated: {exc}") from None
    return arr.copy(), offset


def _b64_tensor(arr: np.ndarray) -> str:
    return base64.b64encode(encode_tensor(arr)).decode("ascii")


def _tensor_from_b64(text: str) -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise FileFormatError(f"invalid base64 tensor blob: {exc}") from None
    arr, end = decode_tensor(raw)
    if end != len(raw):
        raise FileFormatError("trailing bytes after tensor blob")
    return arr


def _checksum(doc: dict[str, Any]) -> str:
    body = {k: v for k, v in doc.items() if k != "checksum"}
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _dump_json(doc: dict[str, Any]) -> bytes:
    doc = dict(doc)
    doc["checksum"] = _checksum(doc)
    return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode("utf-8")


def _load_json(path: str, expected_format: str, supported: tuple[int, ...]) -> dict[str, Any]:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"{path}: not a valid document: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != expected_format:
        raise FileFormatError(
            f"{path}: format tag {doc.get('format') if isinstance(doc, dict) else None!r} "
            f"is not {expected_format!r}"
        )
    version = doc.get("version")
    if version not in supported:
        raise FileFormatError(
            f"{path}: unsupported {expected_format} version {version}; "
            f"supported: {', '.join(str(v) for v in supported)}"
        )
    if doc.get("checksum") != _checksum(doc):
        raise FileFormatError(f"{path}: checksum mismatch (file corrupted or edited)")
    return doc


def _qparams_doc(qp: QuantParams) -> dict[str, Any]:
    return {"scale": qp.scale, "zero_point": qp.zero_point, "dtype": qp.dtype}


def _qparams_from(doc: dict[str, Any]) -> QuantParams:
    return QuantParams(float(doc["scale"]), int(doc["zero_point"]), str(doc["dtype"]))


# ---------------------------------------------------------------- models

def save_model(obj: ModelIR | list[FloatConvLayer], path: str,
               input_dims: tuple[int, int, int] | None = None) -> None:
    """Write a model file — quantized (ModelIR) or float (layer list + dims)."""
    if isinstance(obj, ModelIR):
        layers = []
        for spec in obj.layers:
            layers.append(
                {
                    "stride": spec.stride,
                    "padding": spec.padding,
                    "activation": spec.activation,
                    "weights": _b64_tensor(spec.weights.data),
                    "weight_qparams": _qparams_doc(spec.weights.qparams),
                    "bias": _b64_tensor(spec.bias.astype(np.float32)),
                    "in_qparams": _qparams_doc(spec.in_qparams),
                    "out_qparams": _qparams_doc(spec.out_qparams),
                }
            )
        doc = {
            "format": MODEL_FORMAT,
            "version": obj.version,
            "kind": "quantized",
            "input_dims": list(obj.input_dims),
            "layers": layers,
        }
    else:
        if input_dims is None:
            raise ValueError("float model save needs input_dims")
        layers = [
            {
                "stride": layer.stride,
                "padding": layer.padding,
                "activation": layer.activation,
                "weights": _b64_tensor(layer.weights),
                "bias": _b64_tensor(layer.bias),
            }
            for layer in obj
        ]
        doc = {
            "format": MODEL_FORMAT,
            "version": 1,
            "kind": "float",
            "input_dims": list(input_dims),
            "layers": layers,
        }
    _atomic_write(path, _dump_json(doc))


def load_model(path: str) -> ModelIR | tuple[list[FloatConvLayer], tuple[int, int, int]]:
    """Read a model file; returns ModelIR, or (float layers, input_dims)."""
    doc = _load_json(path, MODEL_FORMAT, SUPPORTED_MODEL_VERSIONS)
    input_dims = tuple(int(d) for d in doc["input_dims"])
    if doc.get("kind") == "float":
        layers = [
            FloatConvLayer(
                weights=_tensor_from_b64(item["weights"]),
                bias=_tensor_from_b64(item["bias"]),
                stride=int(item["stride"]),
                padding=int(item["padding"]),
                activation=str(item["activation"]),
            )
            for item in doc["layers"]
        ]
        return layers, input_dims
    if doc.get("kind") != "quantized":
        raise FileFormatError(f"{path}: unknown model kind {doc.get('kind')!r}")
    specs = []
    for item in doc["layers"]:
        weights = _tensor_from_b64(item["weights"])
        wq = _qparams_from(item["weight_qparams"])
        if weights.dtype != NUMPY_DTYPES[wq.dtype]:
            raise FileFormatError(f"{path}: weight blob dtype does not match its qparams")
        specs.append(
            ConvLayerSpec(
                weights=QuantTensor(weights, wq),
                bias=_tensor_from_b64(item["bias"]),
                stride=int(item["stride"]),
                padding=int(item["padding"]),
                activation=str(item["activation"]),
                in_qparams=_qparams_from(item["in_qparams"]),
                out_qparams=_qparams_from(item["out_qparams"]),
            )
        )
    return ModelIR(specs, input_dims, version=int(doc["version"]))


# ---------------------------------------------------------------- graphs

def save_graph(graph: SDNNGraph, path: str) -> None:
    layers = []
    for layer in graph.layers:
        layers.append(
            {
                "stride": layer.stride,
                "padding": layer.padding,
                "activation": layer.activation,
                "threshold": layer.threshold,
                "in_zero_point": layer.in_zero_point,
                "weights": _b64_tensor(layer.weights),
                "bias_int": _b64_tensor(layer.bias_int.astype(np.int32)),
                "requant": {
                    "scale": layer.requant.scale,
                    "scale_exp": layer.requant.scale_exp,
                    "real_ratio": layer.requant.real_ratio,
                },
                "out_qparams": _qparams_doc(layer.out_qparams),
                "in_dims": list(layer.in_dims),
                "out_dims": list(layer.out_dims),
            }
        )
    bw = graph.bitwidths
    doc = {
        "format": GRAPH_FORMAT,
        "version": graph.version,
        "input_qparams": _qparams_doc(graph.input_qparams),
        "encoder_threshold": graph.encoder_threshold,
        "bitwidths": {
            "acc_bits": bw.acc_bits,
            "out_bits": bw.out_bits,
            "payload_bits": bw.payload_bits,
            "product_bits": bw.product_bits,
            "round_shift": bw.round_shift,
        },
        "layers": layers,
    }
    _atomic_write(path, _dump_json(doc))


def load_graph(path: str) -> SDNNGraph:
    doc = _load_json(path, GRAPH_FORMAT, SUPPORTED_GRAPH_VERSIONS)
    bw_doc = doc["bitwidths"]
    bitwidths = BitwidthConfig(
        acc_bits=int(bw_doc["acc_bits"]),
        out_bits=int(bw_doc["out_bits"]),
        payload_bits=int(bw_doc["payload_bits"]),
        product_bits=int(bw_doc["product_bits"]),
        round_shift=bool(bw_doc["round_shift"]),
    )
    layers = []
    for item in doc["layers"]:
        rq = item["requant"]
        layers.append(
            SDNNLayer(
                weights=_tensor_from_b64(item["weights"]),
                bias_int=_tensor_from_b64(item["bias_int"]).astype(np.int64),
                requant=Requantizer(int(rq["scale"]), int(rq["scale_exp"]), float(rq["real_ratio"])),
                threshold=int(item["threshold"]),
                stride=int(item["stride"]),
                padding=int(item["padding"]),
                activation=str(item["activation"]),
                in_zero_point=int(item["in_zero_point"]),
                out_qparams=_qparams_from(item["out_qparams"]),
                in_dims=tuple(int(d) for d in item["in_dims"]),
                out_dims=tuple(int(d) for d in item["out_dims"]),
            )
        )
    return SDNNGraph(
        layers,
        _qparams_from(doc["input_qparams"]),
        int(doc["encoder_threshold"]),
        bitwidths,
        version=int(doc["version"]),
    )


# ---------------------------------------------------------------- frames

def save_frames(frames: list[np.ndarray] | np.ndarray, path: str) -> None:
    """Frame stack: magic, u32 count, then one float32 tensor blob per frame."""
    if isinstance(frames, np.ndarray) and frames.ndim == 4:
        frames = list(frames)
    chunks = [FRAME_MAGIC, struct.pack("<I", len(frames))]
    for frame in frames:
        chunks.append(encode_tensor(np.asarray(frame, dtype=np.float32)))
    _atomic_write(path, b"".join(chunks))


def load_frames(path: str) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != FRAME_MAGIC:
        raise FileFormatError(f"{path}: bad magic {buf[:4]!r}, expected {FRAME_MAGIC!r}")
    if len(buf) < 8:
        raise FileFormatError(f"{path}: truncated header")
    (count,) = struct.unpack_from("<I", buf, 4)
    frames = []
    offset = 8
    for _ in range(count):
        frame, offset = decode_tensor(buf, offset)
        frames.append(frame)
    if offset != len(buf):
        raise FileFormatError(f"{path}: {len(buf) - offset} trailing bytes")
    return frames


# ---------------------------------------------------------------- spike traces

def save_spike_trace(batches: list[SpikeBatch], path: str) -> None:
    """Spike trace: per batch {u32 timestep, i32 origin, u32 count, pairs}.

    Each pair is (u32 neuron index, i16 payload); origin -1 is the encoder.
    """
    chunks = [TRACE_MAGIC, struct.pack("<I", len(batches))]
    for batch in batches:
        chunks.append(struct.pack("<IiI", batch.timestep, batch.origin, len(batch)))
        pairs = np.empty(len(batch), dtype=[("n", "<u4"), ("p", "<i2")])
        pairs["n"] = batch.neurons
        pairs["p"] = batch.payloads
        chunks.append(pairs.tobytes())
    _atomic_write(path, b"".join(chunks))


def load_spike_trace(path: str) -> list[SpikeBatch]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != TRACE_MAGIC:
        raise FileFormatError(f"{path}: bad magic {buf[:4]!r}, expected {TRACE_MAGIC!r}")
    (count,) = struct.unpack_from("<I", buf, 4)
    offset = 8
    batches = []
    rec = np.dtype([("n", "<u4"), ("p", "<i2")])
    for _ in range(count):
        try:
            timestep, origin, n = struct.unpack_from("<IiI", buf, offset)
        except struct.error:
            raise FileFormatError(f"{path}: truncated batch header") from None
        offset += 12
        nbytes = n * rec.itemsize
        if offset + nbytes > len(buf):
            raise FileFormatError(f"{path}: truncated spike records")
        pairs = np.frombuffer(buf, dtype=rec, count=n, offset=offset)
        offset += nbytes
        batches.append(
            SpikeBatch(timestep, origin, pairs["n"].astype(np.int64), pairs["p"].astype(np.int64))
        )
    if offset != len(buf):
        raise FileFormatError(f"{path}: {len(buf) - offset} trailing bytes")
    return batches
