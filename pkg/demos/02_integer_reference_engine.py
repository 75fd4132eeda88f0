"""Calibrate a float conv stack, then run it with integer-only arithmetic.

The dense reference engine is the ground truth everything else is measured
against.  It has two modes: "float_scale" requantizes accumulators with real
ratios (the textbook quantized forward pass), and "fixed_point" replaces each
ratio with its multiply-shift requantizer — the arithmetic the spiking
runtime uses.  The two disagree by at most one output step per layer.
"""

import numpy as np

from sdnn import (
    convert,
    dequantize_tensor,
    float_forward,
    gen_float_model,
    LayerShape,
    model_macs,
    quantize_model,
    quantize_tensor,
    run_reference,
)

rng = np.random.default_rng(21)
dims = (3, 12, 12)
shapes = [LayerShape(8, 3, 2, 1), LayerShape(12, 3, 1, 1), LayerShape(6, 1, 1, 0)]
layers = gen_float_model(shapes, dims, seed=21)

# post-training static quantization against a small calibration set
calib = [rng.uniform(0.0, 1.0, size=dims).astype(np.float32) for _ in range(12)]
model = quantize_model(layers, calib, dims)
print(f"{len(model.layers)}-layer model, input {dims}, {model_macs(model)} MACs/frame")
for i, layer in enumerate(model.layers):
    print(f"  layer {i}: out {model.layer_dims()[i]}, activation {layer.activation!r}, "
          f"out scale {layer.out_qparams.scale:.5f} zp {layer.out_qparams.zero_point}")

# run one frame three ways: float, float-scale integer, fixed-point integer
frame = calib[0]
frame_q = quantize_tensor(frame, model.input_qparams)

float_out = float_forward(layers, frame)[-1]
ref_float = run_reference(model, frame_q, "float_scale")
ref_fixed = run_reference(model, frame_q, "fixed_point", graph=convert(model))

quant_err = np.abs(dequantize_tensor(ref_float.output) - float_out).max()
step_gap = np.abs(
    ref_fixed.output.data.astype(np.int64) - ref_float.output.data.astype(np.int64)
).max()
print(f"\nfloat vs float-scale integer: max |error| = {quant_err:.5f} "
      f"(quantization noise, a few output steps)")
print(f"float-scale vs fixed-point:   max |gap| = {step_gap} output step(s) "
      f"(<= 1 per layer, compounding across {len(model.layers)} layers)")
print(f"fixed-point saturating clamps this frame: {ref_fixed.clamped}")

# the integer engine is deterministic: same frame, same codes, every time
again = run_reference(model, frame_q, "fixed_point", graph=convert(model))
print(f"re-run bit-identical: {np.array_equal(again.output.data, ref_fixed.output.data)}")
