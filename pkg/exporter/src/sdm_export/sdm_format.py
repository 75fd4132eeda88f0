"""Writer for the ".sdm" quantized-model document and reader for ".sdt" stacks.

The model file is JSON with sorted keys, one-space indent, a trailing
newline, base64-embedded tensor blobs, and a sha256 checksum computed over
the compact (separators ``(",", ":")``) sorted serialization of every field
except ``checksum`` itself.  Tensor blobs are little-endian: u32 dtype code,
u32 rank, u32 dims..., raw data; code 0 is float32, 1 is int8.

A frame stack is the magic ``SDT1``, a u32 frame count, then one float32
tensor blob per frame.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Any

import numpy as np

_F32, _I8 = 0, 1
_DTYPE_OF_CODE = {_F32: np.dtype("<f4"), _I8: np.dtype("i1")}
FRAME_MAGIC = b"SDT1"


class FormatError(ValueError):
    """A file to read or a document to write violates the format contract."""


@dataclass(frozen=True)
class QuantizedLayer:
    """One conv layer in the form the model document stores."""

    weights: np.ndarray  # int8 (O, C, K, K)
    weight_scale: float
    bias: np.ndarray  # float32 (O,)
    stride: int
    padding: int
    activation: str  # "relu" | "none"
    in_scale: float
    in_zero_point: int
    in_dtype: str  # "uint8" | "int8"
    out_scale: float
    out_zero_point: int
    out_dtype: str


def _encode_tensor(arr: np.ndarray, code: int) -> str:
    dtype = _DTYPE_OF_CODE[code]
    header = struct.pack("<II", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    blob = header + np.ascontiguousarray(arr, dtype=dtype).tobytes()
    return base64.b64encode(blob).decode("ascii")


def _checksum(doc: dict[str, Any]) -> str:
    body = {k: v for k, v in doc.items() if k != "checksum"}
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


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


def write_quantized_model(
    layers: list[QuantizedLayer], input_dims: tuple[int, int, int], path: str
) -> None:
    """Write the layers as a version-1 quantized model document."""
    if not layers:
        raise FormatError("refusing to write a model with no layers")
    items = []
    for layer in layers:
        if layer.weights.dtype != np.int8 or layer.weights.ndim != 4:
            raise FormatError(f"weights must be int8 (O, C, K, K), got "
                              f"{layer.weights.dtype} {layer.weights.shape}")
        items.append(
            {
                "stride": int(layer.stride),
                "padding": int(layer.padding),
                "activation": layer.activation,
                "weights": _encode_tensor(layer.weights, _I8),
                "weight_qparams": {
                    "scale": float(layer.weight_scale),
                    "zero_point": 0,
                    "dtype": "int8",
                },
                "bias": _encode_tensor(np.asarray(layer.bias, dtype=np.float32), _F32),
                "in_qparams": {
                    "scale": float(layer.in_scale),
                    "zero_point": int(layer.in_zero_point),
                    "dtype": layer.in_dtype,
                },
                "out_qparams": {
                    "scale": float(layer.out_scale),
                    "zero_point": int(layer.out_zero_point),
                    "dtype": layer.out_dtype,
                },
            }
        )
    doc: dict[str, Any] = {
        "format": "sdnn-model",
        "version": 1,
        "kind": "quantized",
        "input_dims": [int(d) for d in input_dims],
        "layers": items,
    }
    doc["checksum"] = _checksum(doc)
    _atomic_write(path, (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode("utf-8"))


def read_frame_stack(path: str) -> list[np.ndarray]:
    """Read an ".sdt" frame stack into a list of float32 (C, H, W) arrays."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != FRAME_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {FRAME_MAGIC!r}")
    if len(buf) < 8:
        raise FormatError(f"{path}: truncated header")
    (count,) = struct.unpack_from("<I", buf, 4)
    frames = []
    offset = 8
    for _ in range(count):
        try:
            code, rank = struct.unpack_from("<II", buf, offset)
            offset += 8
            dims = struct.unpack_from(f"<{rank}I", buf, offset)
            offset += 4 * rank
        except struct.error as exc:
            raise FormatError(f"{path}: truncated frame header: {exc}") from None
        if code != _F32:
            raise FormatError(f"{path}: frame dtype code {code} is not float32")
        if rank > 8:
            raise FormatError(f"{path}: implausible frame rank {rank}")
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        nbytes = 4 * n
        if offset + nbytes > len(buf):
            raise FormatError(f"{path}: truncated frame data")
        frames.append(
            np.frombuffer(buf, dtype="<f4", count=n, offset=offset).reshape(dims).copy()
        )
        offset += nbytes
    if offset != len(buf):
        raise FormatError(f"{path}: {len(buf) - offset} trailing bytes")
    return frames
