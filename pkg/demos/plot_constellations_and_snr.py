"""
Constellations, SNR plans and equal-gain combining
==================================================

Draw the seven constellations, split a combined SNR over three radio
units, and check by simulation that summing the branches gives back the
requested SNR.
"""

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from cfamc.signal import (
    ModulationScheme,
    apply_channel,
    constellation,
    egc_combine,
    linear_to_db,
    make_snr_plan,
    measure_snr,
    modulate,
)

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(parents=True, exist_ok=True)

# Every constellation is normalized to unit mean energy. Point ``i`` carries
# the bit label ``i``, so neighbouring points differ in one bit.
fig, axes = plt.subplots(1, 7, figsize=(17, 2.8))
for ax, scheme in zip(axes, ModulationScheme):
    pts = constellation(scheme)
    ax.scatter(pts.real, pts.imag, s=6)
    ax.set_title(f"{scheme.name} (E={np.mean(abs(pts) ** 2):.3f})", fontsize=8)
    ax.set_aspect("equal")
    ax.axis("off")
fig.savefig(out / "constellations.png", dpi=90)
print("wrote", out / "constellations.png")

# A diverse plan draws uneven shares; gains and noise variances equal the
# shares, which makes the combined SNR exactly their sum.
plan = make_snr_plan(10.0, 3, "diverse", seed=7)
print("per-RU SNR (dB):", np.round(linear_to_db(np.array(plan.per_ru_snr_linear)), 2))
print("analytic combined SNR (dB):", linear_to_db(plan.egc_snr_linear))

clean = modulate("QAM16", 100_000, seed=1)
branches = [apply_channel(clean, plan.amplitudes[i], plan.noise_vars[i], seed=10 + i) for i in range(3)]
for i, b in enumerate(branches):
    print(f"  RU {i}: measured {measure_snr(clean, b, plan.amplitudes[i]):.2f} dB")
combined = egc_combine(branches)
print(f"combined: measured {measure_snr(clean, combined, sum(plan.amplitudes)):.2f} dB")
