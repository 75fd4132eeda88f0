"""Dense integer convolution engines.

Two requantization paths share the same integer accumulation:

* float_scale — the accumulator is rescaled with float arithmetic and the
  float bias, then rounded.  This is the calibration-grade reference.
* fixed_point — integer bias add, ReLU, 24-bit multiply, arithmetic right
  shift, zero-point add, saturating clamp.  Bit-exact with the spiking
  runtime's neuron update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convert import SDNNGraph, SDNNLayer, convert
from .fixedpoint import (
    BitwidthConfig,
    DEFAULT_BITWIDTHS,
    check_signed_range,
    clamp,
    scale_and_shift,
)
from .model import ConvLayerSpec, ModelIR, ShapeError, conv_output_hw
from .quantization import DTYPE_RANGES, NUMPY_DTYPES, QuantParams, QuantTensor


def conv2d_raw(
    x: np.ndarray, weights: np.ndarray, stride: int, padding: int
) -> np.ndarray:
    """Integer convolution with literal zero padding; int64, no range check.

    x: (C, H, W) integer array; weights: (O, C, K, K).  This is the shared
    low-level accumulation used by both the dense engines (on zero-point
    centered input) and the rest-state computation (on raw activations).
    """
    x = np.asarray(x, dtype=np.int64)
    w = np.asarray(weights, dtype=np.int64)
    k, s, p = w.shape[2], stride, padding
    oh, ow = conv_output_hw(x.shape[1:], k, s, p)
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    acc = np.zeros((w.shape[0], oh, ow), dtype=np.int64)
    for kh in range(k):
        for kw in range(k):
            window = xp[:, kh : kh + (oh - 1) * s + 1 : s, kw : kw + (ow - 1) * s + 1 : s]
            acc += np.einsum("cij,oc->oij", window, w[:, :, kh, kw])
    return acc


def conv2d_int(
    x_q: QuantTensor,
    layer: ConvLayerSpec,
    bitwidths: BitwidthConfig = DEFAULT_BITWIDTHS,
) -> np.ndarray:
    """Accumulate sum((x - z_in) * w_q) over each kernel window.

    Padding uses the input zero-point code (which becomes literal zero after
    centering).  The result must fit the configured accumulator width.
    """
    if x_q.qparams != layer.in_qparams:
        raise ValueError("input qparams do not match the layer's in_qparams")
    if x_q.data.ndim != 3 or x_q.data.shape[0] != layer.in_channels:
        raise ShapeError(
            f"input {x_q.data.shape} does not match layer in_channels {layer.in_channels}"
        )
    centered = x_q.data.astype(np.int64) - layer.in_qparams.zero_point
    acc = conv2d_raw(centered, layer.weights.data, layer.stride, layer.padding)
    check_signed_range(acc, bitwidths.acc_bits, "accumulator")
    return acc


def requantize_float(acc: np.ndarray, layer: ConvLayerSpec) -> QuantTensor:
    """Float-scale requantization of an integer accumulator.

    real = acc * s_in * s_w + bias; activation; then affine quantization to
    the layer's output parameters (round half-to-even, saturate).
    """
    s = layer.in_qparams.scale * layer.weights.qparams.scale
    real = acc.astype(np.float64) * s + layer.bias.astype(np.float64)[:, None, None]
    if layer.activation == "relu":
        real = np.maximum(real, 0.0)
    qp = layer.out_qparams
    q = np.clip(np.rint(real / qp.scale) + qp.zero_point, qp.qmin, qp.qmax)
    return QuantTensor(q.astype(NUMPY_DTYPES[qp.dtype]), qp)


def requantize_fixed(
    acc: np.ndarray,
    layer: SDNNLayer,
    bitwidths: BitwidthConfig = DEFAULT_BITWIDTHS,
) -> tuple[np.ndarray, int]:
    """Integer-only requantization: the heart of both engines.

        y = clamp(((relu(acc + bias_int)) * scale >> scale_exp) + z_out)

    For a linear final layer the ReLU is skipped and negative values flow
    through the (sign-preserving) arithmetic shift.  Returns (y, clamp count);
    y is int64 with values already inside the output dtype's range.
    """
    biased = acc.astype(np.int64) + layer.bias_int[:, None, None]
    if layer.activation == "relu":
        biased = np.maximum(biased, 0)
    shifted = scale_and_shift(biased, layer.requant.scale, layer.requant.scale_exp, bitwidths)
    lo, hi = DTYPE_RANGES[layer.out_qparams.dtype]
    y, n_clamped = clamp(shifted + layer.out_qparams.zero_point, lo, hi)
    return y, n_clamped


def macs_per_layer(model: ModelIR) -> list[int]:
    """Dense multiply-accumulates per frame for each layer."""
    counts = []
    hw = model.input_dims[1:]
    for layer in model.layers:
        oh, ow = conv_output_hw(hw, layer.kernel, layer.stride, layer.padding)
        counts.append(oh * ow * layer.out_channels * layer.kernel * layer.kernel * layer.in_channels)
        hw = (oh, ow)
    return counts


def model_macs(model: ModelIR) -> int:
    """Total dense multiply-accumulates per frame."""
    return sum(macs_per_layer(model))


@dataclass
class ReferenceResult:
    """Dense single-frame forward pass."""

    output: QuantTensor
    activations: list[np.ndarray]  # per-layer integer activations (int64)
    macs: int
    clamped: int  # total saturating clamps in fixed_point mode


def run_reference(
    model: ModelIR,
    frame_q: QuantTensor,
    mode: str = "fixed_point",
    graph: SDNNGraph | None = None,
    bitwidths: BitwidthConfig = DEFAULT_BITWIDTHS,
) -> ReferenceResult:
    """Run one pre-quantized frame densely through every layer.

    mode "float_scale" uses float requantization; "fixed_point" uses the
    integer datapath (building a zero-threshold graph on the fly unless one is
    supplied).  Returns the final QuantTensor, every layer's integer
    activations, and the dense MAC count.
    """
    if mode not in ("float_scale", "fixed_point"):
        raise ValueError(f"mode must be 'float_scale' or 'fixed_point', got {mode!r}")
    if frame_q.qparams != model.input_qparams:
        raise ValueError("frame qparams do not match the model's input qparams")

    if mode == "fixed_point" and graph is None:
        graph = convert(model, bitwidths=bitwidths)

    activations: list[np.ndarray] = []
    clamped = 0
    x_q = frame_q
    for i, spec in enumerate(model.layers):
        acc = conv2d_int(x_q, spec, bitwidths)
        if mode == "float_scale":
            y_q = requantize_float(acc, spec)
            activations.append(y_q.data.astype(np.int64))
        else:
            # The integer datapath accumulates raw codes (padding with the
            # zero-point code), which is the centered sum plus z_in * (full
            # kernel sum) at every output; bias_int folds that term back out.
            layer = graph.layers[i]
            kernel_sum = layer.weights.astype(np.int64).sum(axis=(1, 2, 3))
            acc_raw = acc + layer.in_zero_point * kernel_sum[:, None, None]
            check_signed_range(acc_raw, bitwidths.acc_bits, "accumulator")
            y, n = requantize_fixed(acc_raw, layer, bitwidths)
            clamped += n
            activations.append(y)
            y_q = QuantTensor(y.astype(NUMPY_DTYPES[spec.out_qparams.dtype]), spec.out_qparams)
        x_q = y_q
    return ReferenceResult(x_q, activations, model_macs(model), clamped)
