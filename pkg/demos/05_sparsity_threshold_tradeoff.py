"""Buy sparsity with thresholds and read the bill in joules.

Raising a neuron's firing threshold above zero lets small activation changes
go untransmitted: downstream reconstructions drift within the threshold, the
output deviates slightly, and the synop count drops.  The sweep raises the
threshold to 1 on the encoder plus a growing prefix of layers (stage n covers
the first n stages) and prices each stage with a linear energy model.
"""

from pathlib import Path

from sdnn import LayerShape, gen_synthetic, load_energy_model, render_report, threshold_sweep

cfg = Path(__file__).resolve().parents[1] / "configs" / "loihi_example.cfg"
em = load_energy_model(str(cfg))
print(f"energy model: timestep {em.timestep_s * 1e3:.2f} ms, "
      f"static {em.static_power_w} W, {em.energy_per_synop_j:.1e} J/synop, "
      f"{em.energy_per_spike_j:.1e} J/spike")

model, frames, _ = gen_synthetic(
    [LayerShape(6, 3, 2, 1), LayerShape(8, 3, 1, 1), LayerShape(9, 1, 1, 0)],
    (3, 12, 12),
    16,
    seed=11,
    motion_rate=0.75,
    background_offset=-0.25,
)
sweep = threshold_sweep(model, list(frames), energy_model=em)

print(f"\n{render_report(sweep, 'structured-text')}")

rows = sweep.rows
lossless, cheapest = rows[0], min(rows, key=lambda r: r.synops_per_frame)
print(f"stage 0 is exact (deviation {lossless.value}) at synop ratio "
      f"{lossless.synop_ratio:.3f}; stage {cheapest.n} trades deviation "
      f"{cheapest.value:.4f} for ratio {cheapest.synop_ratio:.3f}")
print(f"energy/frame: {lossless.energy_per_frame_j:.3e} J -> "
      f"{cheapest.energy_per_frame_j:.3e} J "
      f"({100 * (1 - cheapest.energy_per_frame_j / lossless.energy_per_frame_j):.1f}% saved)")
