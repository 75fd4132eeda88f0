"""Integer fixed-point primitives shared by the dense engine and the runtime.

Everything here operates on int64 numpy arrays (or Python ints) and models a
hardware datapath: bounded accumulators, a bounded wide multiply register, an
arithmetic right shift, and saturating clamps.  All range violations raise
:class:`IntegerOverflowError` — nothing ever wraps silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class IntegerOverflowError(ArithmeticError):
    """An intermediate value exceeded its modeled register width."""


@dataclass(frozen=True)
class BitwidthConfig:
    """Register widths and rounding behavior of the emulated datapath.

    acc_bits:      signed width of the weighted-sum accumulator.
    out_bits:      width of the rescaled activation (sign per output dtype).
    payload_bits:  signed width of a spike payload.
    product_bits:  signed width of the wide register holding acc * scale.
    round_shift:   when True, add half an LSB (1 << (shift-1)) before the
                   arithmetic right shift; default is plain floor, matching
                   a bare ">>".
    """

    acc_bits: int = 24
    out_bits: int = 8
    payload_bits: int = 16
    product_bits: int = 64
    round_shift: bool = False

    def __post_init__(self) -> None:
        if not (2 <= self.acc_bits <= 48):
            raise ValueError(f"acc_bits must be in [2, 48], got {self.acc_bits}")
        if self.out_bits != 8:
            raise ValueError(f"only 8-bit activations are supported, got {self.out_bits}")
        if not (2 <= self.payload_bits <= 16):
            raise ValueError(f"payload_bits must be in [2, 16], got {self.payload_bits}")
        if not (self.acc_bits + 24 <= self.product_bits <= 64):
            raise ValueError(
                f"product_bits must cover acc_bits + 24 and fit int64, got {self.product_bits}"
            )


DEFAULT_BITWIDTHS = BitwidthConfig()


def signed_limits(bits: int) -> tuple[int, int]:
    """Inclusive (min, max) of a signed two's-complement integer of `bits`."""
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


def check_signed_range(values: np.ndarray | int, bits: int, what: str) -> None:
    """Raise IntegerOverflowError unless every value fits in `bits` signed bits."""
    lo, hi = signed_limits(bits)
    arr = np.asarray(values)
    if arr.size == 0:
        return
    vmin = int(arr.min())
    vmax = int(arr.max())
    if vmin < lo or vmax > hi:
        bad = vmin if vmin < lo else vmax
        raise IntegerOverflowError(
            f"{what} value {bad} outside signed {bits}-bit range [{lo}, {hi}]"
        )


def arithmetic_shift_right(values: np.ndarray, shift: int) -> np.ndarray:
    """Arithmetic right shift on int64 (floor division by 2**shift)."""
    if shift < 0:
        raise ValueError(f"shift must be >= 0, got {shift}")
    return values >> shift


def scale_and_shift(
    values: np.ndarray,
    scale: int,
    shift: int,
    config: BitwidthConfig = DEFAULT_BITWIDTHS,
) -> np.ndarray:
    """Compute (values * scale) >> shift with wide-register checking.

    `values` is interpreted as an int64 array; the product must fit the
    configured wide register (an overflow raises, modeling a hardware fault
    flag, never a wraparound).  When config.round_shift is set, half an LSB is
    added before the shift so the result rounds to nearest instead of
    flooring.
    """
    v = np.asarray(values, dtype=np.int64)
    # bound-check before multiplying: numpy int64 would wrap silently
    lo, hi = signed_limits(config.product_bits)
    bound = hi // scale
    if v.size:
        vmax = int(np.abs(v).max())
        if vmax > bound:
            raise IntegerOverflowError(
                f"requantizer product {vmax} * {scale} outside signed "
                f"{config.product_bits}-bit range [{lo}, {hi}]"
            )
    prod = v * np.int64(scale)
    if config.round_shift and shift > 0:
        prod = prod + (np.int64(1) << np.int64(shift - 1))
    return arithmetic_shift_right(prod, shift)


def clamp(values: np.ndarray, lo: int, hi: int) -> tuple[np.ndarray, int]:
    """Saturating clamp to [lo, hi]; returns (clamped, number clamped)."""
    clipped = np.clip(values, lo, hi)
    n_clamped = int(np.count_nonzero(clipped != values))
    return clipped, n_clamped
