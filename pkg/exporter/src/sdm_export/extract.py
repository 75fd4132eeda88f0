"""Parameter extraction from an eager-mode quantized torch model.

The supported shape is a Sequential chain: one Quantize module, a run of
quantized Conv2d / ConvReLU2d modules (Identity placeholders left behind by
fusion are skipped), and one DeQuantize module.  Extraction only reads
parameters; it never runs the model.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.ao.nn.intrinsic.quantized as nniq
import torch.ao.nn.quantized as nnq

from .sdm_format import QuantizedLayer


class UnsupportedModelError(ValueError):
    """The model contains a layer or configuration that cannot be exported."""


_ACT_DTYPES = {torch.quint8: "uint8", torch.qint8: "int8"}
_TENSOR_QSCHEMES = (torch.per_tensor_affine, torch.per_tensor_symmetric)


def _pair(name: str, what: str, value) -> int:
    a, b = (value if isinstance(value, (tuple, list)) else (value, value))
    if a != b:
        raise UnsupportedModelError(
            f"layer '{name}' has asymmetric {what} {tuple(value)}; only square "
            f"geometry is supported"
        )
    return int(a)


def _extract_conv(name: str, mod: nnq.Conv2d, in_scale: float,
                  in_zero_point: int, in_dtype: str) -> QuantizedLayer:
    # ConvReLU2d subclasses Conv2d, so the fused check must come first.
    activation = "relu" if isinstance(mod, nniq.ConvReLU2d) else "none"

    if _pair(name, "dilation", mod.dilation) != 1:
        raise UnsupportedModelError(f"layer '{name}' has dilation {tuple(mod.dilation)}")
    if int(mod.groups) != 1:
        raise UnsupportedModelError(f"layer '{name}' has groups={int(mod.groups)}; "
                                    f"only dense convolutions are supported")
    stride = _pair(name, "stride", mod.stride)
    padding = _pair(name, "padding", mod.padding)

    weight = mod.weight()
    kh, kw = weight.shape[2], weight.shape[3]
    if kh != kw:
        raise UnsupportedModelError(f"layer '{name}' has a non-square {kh}x{kw} kernel")
    if not 0 <= padding < kh:
        raise UnsupportedModelError(
            f"layer '{name}' has padding {padding} outside [0, kernel={kh})"
        )
    qscheme = weight.qscheme()
    if qscheme not in _TENSOR_QSCHEMES:
        raise UnsupportedModelError(
            f"layer '{name}' uses weight qscheme {qscheme}; only per-tensor "
            f"symmetric weights are supported"
        )
    if weight.dtype != torch.qint8:
        raise UnsupportedModelError(f"layer '{name}' has {weight.dtype} weights, "
                                    f"expected qint8")
    w_zp = int(weight.q_zero_point())
    if w_zp != 0:
        raise UnsupportedModelError(
            f"layer '{name}' has weight zero point {w_zp}; symmetric weights "
            f"must use zero point 0"
        )

    bias_t = mod.bias()
    n_out = int(weight.shape[0])
    bias = (np.zeros(n_out, dtype=np.float32) if bias_t is None
            else bias_t.detach().numpy().astype(np.float32, copy=True))

    return QuantizedLayer(
        weights=weight.int_repr().numpy().astype(np.int8, copy=True),
        weight_scale=float(weight.q_scale()),
        bias=bias,
        stride=stride,
        padding=padding,
        activation=activation,
        in_scale=in_scale,
        in_zero_point=in_zero_point,
        in_dtype=in_dtype,
        out_scale=float(mod.scale),
        out_zero_point=int(mod.zero_point),
        out_dtype="uint8",
    )


def extract_chain(model: torch.nn.Module) -> tuple[list[QuantizedLayer], list[str]]:
    """Walk the model's children in order and pull out the conv chain.

    Returns the extracted layers plus human-readable warnings.  Raises
    UnsupportedModelError, naming the offending layer, for anything outside
    the quantize -> conv[+relu]... -> dequantize shape.
    """
    named = [(name, mod) for name, mod in model.named_children()
             if not isinstance(mod, torch.nn.Identity)]
    if not named:
        raise UnsupportedModelError("model has no layers")

    warnings: list[str] = []
    first_name, first = named[0]
    if not isinstance(first, nnq.Quantize):
        raise UnsupportedModelError(
            f"layer '{first_name}' ({type(first).__name__}) is not supported here; "
            f"the model must start with a Quantize stub"
        )
    if first.dtype not in _ACT_DTYPES:
        raise UnsupportedModelError(
            f"layer '{first_name}' quantizes to {first.dtype}; only quint8 and "
            f"qint8 activations are supported"
        )
    in_scale = float(first.scale)
    in_zero_point = int(first.zero_point)
    in_dtype = _ACT_DTYPES[first.dtype]

    last_name, last = named[-1]
    if not isinstance(last, nnq.DeQuantize):
        raise UnsupportedModelError(
            f"layer '{last_name}' ({type(last).__name__}) is not supported here; "
            f"the model must end with a DeQuantize stub"
        )

    middle = named[1:-1]
    layers: list[QuantizedLayer] = []
    for i, (name, mod) in enumerate(middle):
        if not isinstance(mod, nnq.Conv2d):
            raise UnsupportedModelError(
                f"layer '{name}' ({type(mod).__name__}) is not supported; only "
                f"quantized Conv2d and ConvReLU2d layers can be exported"
            )
        layer = _extract_conv(name, mod, in_scale, in_zero_point, in_dtype)
        if layer.activation != "relu" and i != len(middle) - 1:
            raise UnsupportedModelError(
                f"layer '{name}' is a hidden conv without a fused ReLU; "
                f"unsigned intermediate activations require one"
            )
        if mod.bias() is None:
            warnings.append(f"layer '{name}' has no bias; exported as zeros")
        layers.append(layer)
        in_scale, in_zero_point, in_dtype = (
            layer.out_scale, layer.out_zero_point, layer.out_dtype)

    if not layers:
        raise UnsupportedModelError("model has no conv layers between the stubs")
    return layers, warnings
