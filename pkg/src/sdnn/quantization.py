"""Affine (scale/zero-point) tensor quantization.

The mapping in both directions is

    real      = scale * (q - zero_point)
    quantized = clamp(round_half_even(real / scale) + zero_point)

with per-tensor parameters.  Activations use unsigned 8-bit storage with a
free zero-point; weights use signed 8-bit symmetric quantization (zero_point
fixed at 0, scale chosen so the largest magnitude maps to +/-127).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE_RANGES: dict[str, tuple[int, int]] = {
    "int8": (-128, 127),
    "uint8": (0, 255),
}

NUMPY_DTYPES: dict[str, np.dtype] = {
    "int8": np.dtype(np.int8),
    "uint8": np.dtype(np.uint8),
}


class CalibrationError(ValueError):
    """An observer was finalized without data, or calibration input was unusable."""


def require_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class QuantParams:
    """Per-tensor affine quantization parameters."""

    scale: float
    zero_point: int
    dtype: str = "uint8"

    def __post_init__(self) -> None:
        if self.dtype not in DTYPE_RANGES:
            raise ValueError(f"unknown quantized dtype {self.dtype!r}")
        if not (np.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        lo, hi = DTYPE_RANGES[self.dtype]
        if not (lo <= self.zero_point <= hi):
            raise ValueError(
                f"zero_point {self.zero_point} outside {self.dtype} range [{lo}, {hi}]"
            )

    @property
    def qmin(self) -> int:
        return DTYPE_RANGES[self.dtype][0]

    @property
    def qmax(self) -> int:
        return DTYPE_RANGES[self.dtype][1]


@dataclass
class QuantTensor:
    """Integer tensor plus the affine parameters that give it meaning."""

    data: np.ndarray
    qparams: QuantParams

    def __post_init__(self) -> None:
        expected = NUMPY_DTYPES[self.qparams.dtype]
        if self.data.dtype != expected:
            raise TypeError(
                f"data dtype {self.data.dtype} does not match qparams dtype "
                f"{self.qparams.dtype}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def quantize_tensor(values: np.ndarray, qparams: QuantParams) -> QuantTensor:
    """Quantize a real-valued array: round half-to-even, then saturate."""
    values = np.asarray(values, dtype=np.float64)
    require_finite(values, "input to quantize_tensor")
    q = np.rint(values / qparams.scale) + qparams.zero_point
    q = np.clip(q, qparams.qmin, qparams.qmax)
    return QuantTensor(q.astype(NUMPY_DTYPES[qparams.dtype]), qparams)


def dequantize_tensor(qt: QuantTensor) -> np.ndarray:
    """Map integer storage back to real values (float64)."""
    return qt.qparams.scale * (qt.data.astype(np.float64) - qt.qparams.zero_point)


class MinMaxObserver:
    """Tracks the running min/max of observed tensors to derive QuantParams.

    The observed range is always widened to include 0 so that the real value
    zero is exactly representable (required both for padding and for resting
    activations).  Finalizing without any observation raises CalibrationError;
    a degenerate all-zero range falls back to scale=1, zero_point=0.
    """

    def __init__(self) -> None:
        self.min_val = np.inf
        self.max_val = -np.inf
        self.count = 0

    def update(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        require_finite(values, "observed tensor")
        if values.size == 0:
            return
        self.min_val = min(self.min_val, float(values.min()))
        self.max_val = max(self.max_val, float(values.max()))
        self.count += values.size

    def qparams(self, dtype: str = "uint8") -> QuantParams:
        if self.count == 0:
            raise CalibrationError("observer finalized without any observed data")
        lo, hi = DTYPE_RANGES[dtype]
        min_val = min(self.min_val, 0.0)
        max_val = max(self.max_val, 0.0)
        if min_val == 0.0 and max_val == 0.0:
            return QuantParams(1.0, 0, dtype)
        scale = (max_val - min_val) / (hi - lo)
        zero_point = int(np.clip(np.rint(lo - min_val / scale), lo, hi))
        return QuantParams(scale, zero_point, dtype)


def symmetric_weight_qparams(weights: np.ndarray) -> QuantParams:
    """Signed-8 symmetric parameters: scale = max|w| / 127, zero_point = 0.

    An all-zero tensor gets the degenerate scale 1.0 so the mapping stays
    invertible.
    """
    weights = np.asarray(weights, dtype=np.float64)
    require_finite(weights, "weights")
    max_abs = float(np.abs(weights).max()) if weights.size else 0.0
    scale = max_abs / 127.0 if max_abs > 0.0 else 1.0
    return QuantParams(scale, 0, "int8")


def quantize_weights(weights: np.ndarray) -> QuantTensor:
    """Symmetric signed-8 weight quantization (never uses the -128 code)."""
    qp = symmetric_weight_qparams(weights)
    q = np.clip(np.rint(np.asarray(weights, dtype=np.float64) / qp.scale), -127, 127)
    return QuantTensor(q.astype(np.int8), qp)
