"""
A desk-scale comparison of the three approaches
===============================================

Generate the desk dataset, train the central, distributed and hybrid
models twice each with independent seeds, and write the comparison report
with the shipped reference curves overlaid. Takes a few minutes on a
laptop CPU.
"""

import sys
from pathlib import Path

from cfamc.dataset import DatasetConfig, generate_dataset
from cfamc.evaluation import PipelineConfig, emit_report, monte_carlo_evaluate, reference_curves
from cfamc.model import ModelSpec
from cfamc.training import Hyperparams, as_splits

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output") / "desk"

data = as_splits(generate_dataset(DatasetConfig.desk(), out / "data"))
hp = Hyperparams(batch_size=16)
spec = ModelSpec("central", 128, 4)

reports = []
for approach in ("central", "distributed", "hybrid"):
    du = ModelSpec("du_feature", 128, 4) if approach == "hybrid" else None
    report = monte_carlo_evaluate(PipelineConfig(approach, spec, data, hp, 3, du), n_runs=2)
    report.label = approach
    reports.append(report)
    by_snr = ", ".join(f"{s:.0f} dB {100 * a:.1f}%" for s, a in zip(report.snr_db, report.acc_by_snr))
    print(f"{approach:<12} {100 * report.accuracy:.2f}% (runs {report.mc.per_run}); {by_snr}")

paths = emit_report(reports, reference_curves(), out / "report")
print("report written to", paths["csv"].parent)
