"""Real values to 8-bit codes, and rescale ratios to multiply-shift pairs.

Everything downstream — the integer engine, the conversion, the spiking
runtime — rests on two small pieces of arithmetic shown here: affine
quantization x = scale * (q - zero_point) with round-half-to-even, and the
requantizer, which approximates a real ratio R by scale / 2**scale_exp with
24 bits of mantissa.
"""

import numpy as np

from sdnn import (
    MinMaxObserver,
    dequantize_tensor,
    derive_requantizer,
    quantize_tensor,
    quantize_weights,
)

rng = np.random.default_rng(7)

# --- activations: calibrate an observer, then quantize ---------------------
signal = rng.uniform(-0.4, 1.2, size=1000).astype(np.float32)
obs = MinMaxObserver()
obs.update(signal)
qp = obs.qparams("uint8")
print(f"observed range [{obs.min_val:+.3f}, {obs.max_val:+.3f}]")
print(f"uint8 params   scale={qp.scale:.6f} zero_point={qp.zero_point}")

qt = quantize_tensor(signal, qp)
err = np.abs(dequantize_tensor(qt) - signal)
print(f"codes span     [{qt.data.min()}, {qt.data.max()}]")
print(f"round-trip err max={err.max():.6f} (<= scale/2 = {qp.scale / 2:.6f})")

# ties round half-to-even: 0.5 and 1.5 scale-steps land 0 and 2 above zero_point
ties = quantize_tensor(np.array([0.5, 1.5]) * qp.scale, qp)
print(f"tie-breaking   0.5*scale -> zero_point+{ties.data[0] - qp.zero_point}, "
      f"1.5*scale -> zero_point+{ties.data[1] - qp.zero_point} (half-to-even)")

# --- weights: symmetric signed-8, zero_point pinned to 0 --------------------
weights = rng.normal(0.0, 0.2, size=(4, 3, 3, 3)).astype(np.float32)
wq = quantize_weights(weights)
print(f"\nweights        scale={wq.qparams.scale:.6f} "
      f"zero_point={wq.qparams.zero_point} codes in [{wq.data.min()}, {wq.data.max()}]")
print("the -128 code is never produced, so |w_q| <= 127 exactly")

# --- the requantizer: R as (scale * acc) >> scale_exp -----------------------
print("\nratio      -> scale      exp   relative error")
for ratio in (1.0, 0.5, 0.3, 0.05 * 0.02 / 0.1, 2.0**-12):
    rq = derive_requantizer(ratio)
    print(f"{ratio:<10.6g} -> {rq.scale:<10d} {rq.scale_exp:<5d} {rq.relative_error:.2e}")

# the fixed-point product stays within one output step of floor(acc * R)
ratio = 0.3
rq = derive_requantizer(ratio)
accs = rng.integers(-(1 << 23), 1 << 23, size=10_000, dtype=np.int64)
fixed = (accs * rq.scale) >> np.int64(rq.scale_exp)
p, q = ratio.as_integer_ratio()
exact = np.array([(int(a) * p) // q for a in accs])
print(f"\n10k accumulators at R={ratio}: max |fixed - floor(acc*R)| = "
      f"{np.abs(fixed - exact).max()} (bound: 1)")
