"""Model descriptions: float convolution stacks and their quantized form.

A model is a plain chain of 2-D convolutions over CHW tensors.  Hidden layers
use ReLU; the final layer may be linear ("none") so its output can carry
signed regression values (e.g. grid-detector offsets).  Pooling is expressed
as strided convolution; there are no skip connections.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quantization import (
    CalibrationError,
    MinMaxObserver,
    QuantParams,
    QuantTensor,
    quantize_weights,
    require_finite,
)

ACTIVATIONS = ("relu", "none")


class ShapeError(ValueError):
    """Tensor or layer geometry is inconsistent."""


def conv_output_hw(in_hw: tuple[int, int], kernel: int, stride: int, padding: int) -> tuple[int, int]:
    """Spatial output size of a convolution: floor((n + 2p - k)/s) + 1."""
    oh = (in_hw[0] + 2 * padding - kernel) // stride + 1
    ow = (in_hw[1] + 2 * padding - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"kernel {kernel} stride {stride} padding {padding} collapses input {in_hw}"
        )
    return oh, ow


def _check_geometry(kernel: int, stride: int, padding: int) -> None:
    if kernel < 1:
        raise ShapeError(f"kernel must be >= 1, got {kernel}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if not (0 <= padding < kernel):
        raise ShapeError(f"padding must satisfy 0 <= padding < kernel, got {padding}")


@dataclass
class FloatConvLayer:
    """One float conv layer: weights (O, C, K, K), bias (O,)."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    activation: str = "relu"

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32)
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError(f"weights must be (O, C, K, K), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} filters"
            )
        _check_geometry(self.kernel, self.stride, self.padding)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        require_finite(self.weights, "weights")
        require_finite(self.bias, "bias")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]


def float_conv2d(x: np.ndarray, layer: FloatConvLayer) -> np.ndarray:
    """Dense float32 convolution of a CHW tensor (zero padding), pre-activation."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3 or x.shape[0] != layer.in_channels:
        raise ShapeError(f"input {x.shape} does not match layer in_channels {layer.in_channels}")
    k, s, p = layer.kernel, layer.stride, layer.padding
    oh, ow = conv_output_hw(x.shape[1:], k, s, p)
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    acc = np.zeros((layer.out_channels, oh, ow), dtype=np.float64)
    for kh in range(k):
        for kw in range(k):
            window = xp[:, kh : kh + (oh - 1) * s + 1 : s, kw : kw + (ow - 1) * s + 1 : s]
            acc += np.einsum("cij,oc->oij", window.astype(np.float64), layer.weights[:, :, kh, kw].astype(np.float64))
    return acc + layer.bias[:, None, None].astype(np.float64)


def float_forward(layers: list[FloatConvLayer], frame: np.ndarray) -> list[np.ndarray]:
    """Run the float stack; returns each layer's post-activation output."""
    outputs: list[np.ndarray] = []
    x = np.asarray(frame, dtype=np.float32)
    for layer in layers:
        y = float_conv2d(x, layer)
        if layer.activation == "relu":
            y = np.maximum(y, 0.0)
        outputs.append(y)
        x = y.astype(np.float32)
    return outputs


@dataclass
class ConvLayerSpec:
    """One quantized conv layer of the integer model.

    Weights are stored as a signed-8 QuantTensor; the bias stays float32 (it
    is folded to integers only at conversion time).  in_qparams describe the
    layer's integer input encoding, out_qparams its integer output encoding.
    """

    weights: QuantTensor
    bias: np.ndarray
    stride: int
    padding: int
    activation: str
    in_qparams: QuantParams
    out_qparams: QuantParams

    def __post_init__(self) -> None:
        self.bias = np.asarray(self.bias, dtype=np.float32)
        w = self.weights.data
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeError(f"weights must be (O, C, K, K), got {w.shape}")
        if self.weights.qparams.dtype != "int8" or self.weights.qparams.zero_point != 0:
            raise ValueError("weights must be signed-8 symmetric (zero_point 0)")
        if self.bias.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {w.shape[0]} filters")
        _check_geometry(self.kernel, self.stride, self.padding)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        require_finite(self.bias, "bias")

    @property
    def out_channels(self) -> int:
        return self.weights.data.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.data.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.data.shape[2]


@dataclass
class ModelIR:
    """A quantized conv chain plus its input geometry.

    Invariant: each layer's in_qparams equal the previous layer's out_qparams
    (checked by validate), so integer tensors flow through without
    re-encoding.
    """

    layers: list[ConvLayerSpec]
    input_dims: tuple[int, int, int]  # (C, H, W)
    version: int = 1

    def __post_init__(self) -> None:
        self.input_dims = tuple(int(d) for d in self.input_dims)  # type: ignore[assignment]
        self.validate()

    def validate(self) -> None:
        if not self.layers:
            raise ValueError("model must have at least one layer")
        if len(self.input_dims) != 3 or any(d < 1 for d in self.input_dims):
            raise ShapeError(f"input_dims must be three positive ints, got {self.input_dims}")
        c, h, w = self.input_dims
        hw = (h, w)
        channels = c
        for i, layer in enumerate(self.layers):
            if layer.in_channels != channels:
                raise ShapeError(
                    f"layer {i} expects {layer.in_channels} input channels, chain provides {channels}"
                )
            if layer.kernel > min(hw) + 2 * layer.padding:
                raise ShapeError(f"layer {i} kernel {layer.kernel} larger than padded input {hw}")
            hw = conv_output_hw(hw, layer.kernel, layer.stride, layer.padding)
            channels = layer.out_channels
            if i > 0 and self.layers[i - 1].out_qparams != layer.in_qparams:
                raise ValueError(
                    f"layer {i} in_qparams do not match layer {i - 1} out_qparams"
                )
            if i < len(self.layers) - 1 and layer.activation != "relu":
                raise ValueError(f"hidden layer {i} must use relu activation")

    def layer_dims(self) -> list[tuple[int, int, int]]:
        """Output dims (C, H, W) of every layer, in order."""
        dims: list[tuple[int, int, int]] = []
        hw = self.input_dims[1:]
        for layer in self.layers:
            hw = conv_output_hw(hw, layer.kernel, layer.stride, layer.padding)
            dims.append((layer.out_channels, hw[0], hw[1]))
        return dims

    @property
    def input_qparams(self) -> QuantParams:
        return self.layers[0].in_qparams

    @property
    def output_qparams(self) -> QuantParams:
        return self.layers[-1].out_qparams


def quantize_model(
    layers: list[FloatConvLayer],
    calib_frames: list[np.ndarray] | np.ndarray,
    input_dims: tuple[int, int, int] | None = None,
) -> ModelIR:
    """Post-training static quantization of a float conv stack.

    Runs the float model over the calibration frames, observing the input and
    every post-activation output with min/max observers, then freezes affine
    parameters: unsigned-8 for the input and all ReLU outputs, signed-8 for a
    linear final layer, symmetric signed-8 for weights.  Biases stay float32.
    """
    frames = [np.asarray(f, dtype=np.float32) for f in calib_frames]
    if not frames:
        raise CalibrationError("quantize_model needs at least one calibration frame")
    if input_dims is None:
        input_dims = tuple(frames[0].shape)  # type: ignore[assignment]
    if len(input_dims) != 3:
        raise ShapeError(f"input_dims must be (C, H, W), got {input_dims}")

    input_obs = MinMaxObserver()
    output_obs = [MinMaxObserver() for _ in layers]
    for frame in frames:
        if tuple(frame.shape) != tuple(input_dims):
            raise ShapeError(f"frame shape {frame.shape} does not match input dims {input_dims}")
        input_obs.update(frame)
        for obs, activation in zip(output_obs, float_forward(layers, frame)):
            obs.update(activation)

    in_qp = input_obs.qparams("uint8")
    specs: list[ConvLayerSpec] = []
    for i, layer in enumerate(layers):
        out_dtype = "uint8" if layer.activation == "relu" else "int8"
        out_qp = output_obs[i].qparams(out_dtype)
        specs.append(
            ConvLayerSpec(
                weights=quantize_weights(layer.weights),
                bias=layer.bias,
                stride=layer.stride,
                padding=layer.padding,
                activation=layer.activation,
                in_qparams=in_qp,
                out_qparams=out_qp,
            )
        )
        in_qp = out_qp
    return ModelIR(specs, tuple(input_dims))
