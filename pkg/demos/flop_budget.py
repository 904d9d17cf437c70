"""
Where the FLOPs go
==================

Tabulate the analytic FLOP counts over the model grid and break one model
down layer by layer.
"""

from cfamc.flops import estimate_model_flops, grid_rows
from cfamc.model import INPUT_SIZES, STACK_RANGE, ModelSpec

rows = grid_rows(INPUT_SIZES, STACK_RANGE, ("central", "distributed"))
print(f"{'approach':<12}{'N':>6}{'stacks':>8}{'MFLOPs':>10}")
for r in rows:
    print(f"{r['approach']:<12}{r['input_size']:>6}{r['n_stacks']:>8}{r['mflops']:>10.2f}")

# The convolutions of the first stacks dominate; the dense head is small
# and pooling, activations and concatenation cost nothing.
report = estimate_model_flops(ModelSpec("central", 512, 4))
print()
print(report.to_csv())
print(report.summary())

hybrid = estimate_model_flops(ModelSpec("hybrid_ensemble", 128, 4, 3, du_input_size=256, du_n_stacks=7))
print(f"hybrid RU 128 / DU 256: {hybrid.mflops:.2f} MFLOPs "
      f"({hybrid.per_ru / 1e6:.2f} per RU, {hybrid.du / 1e6:.2f} at the DU)")
