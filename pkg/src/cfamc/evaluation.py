"""Accuracy per SNR, confusion matrices, Monte-Carlo runs and report files."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from torch import nn

from . import seeding
from .dataset import SplitData
from .errors import CorruptDataError, InvalidArgument, PartialResultsError, PersistenceError
from .model import N_CLASSES, ModelSpec, bundle_of
from .signal import ModulationScheme
from .training import (
    DataSplits,
    Hyperparams,
    as_splits,
    train_central_pipeline,
    train_distributed_pipeline,
    train_hybrid_pipeline,
)

REFERENCE_FILE = "reference_curves.json"
REFERENCE_SHA256 = "800d183568e5c410df4e38c486fba0fd615b9b57a847839177673a647e5d718e"
REFERENCE_TAGS = ("central_egc", "distributed_3ru", "distributed_6ru", "hybrid")


@dataclass
class MonteCarloStats:
    n_runs: int
    per_run: list
    mean: float
    std: float
    digests: list = field(default_factory=list)

    @classmethod
    def from_runs(cls, accs, digests=()):
        a = np.asarray(accs, dtype=float)
        std = float(a.std(ddof=1)) if a.size > 1 else 0.0
        return cls(int(a.size), [float(v) for v in a], float(a.mean()), std, list(digests))


@dataclass
class EvalReport:
    accuracy: float
    snr_db: np.ndarray            # EGC SNR grid
    acc_by_snr: np.ndarray        # fraction, per EGC SNR
    count_by_snr: np.ndarray
    n_ru: int
    confusion: np.ndarray         # rows true, cols predicted
    n_records: int
    mc: MonteCarloStats
    label: str = "model"

    @property
    def mean_ru_snr_db(self) -> np.ndarray:
        return mean_ru_snr_db(self.snr_db, self.n_ru)

    def accuracy_at(self, snr_db: float) -> float:
        i = int(np.argmin(np.abs(self.snr_db - snr_db)))
        if not math.isclose(self.snr_db[i], snr_db, abs_tol=1e-6):
            raise InvalidArgument(f"no evaluation at {snr_db} dB")
        return float(self.acc_by_snr[i])

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "accuracy": self.accuracy,
            "n_records": self.n_records,
            "n_ru": self.n_ru,
            "egc_snr_db": [float(v) for v in self.snr_db],
            "mean_ru_snr_db": [float(v) for v in self.mean_ru_snr_db],
            "accuracy_by_snr": [float(v) for v in self.acc_by_snr],
            "count_by_snr": [int(v) for v in self.count_by_snr],
            "confusion": self.confusion.tolist(),
            "classes": [s.name for s in ModulationScheme],
            "monte_carlo": {"n_runs": self.mc.n_runs, "per_run": self.mc.per_run,
                            "mean": self.mc.mean, "std": self.mc.std, "digests": self.mc.digests},
        }


def mean_ru_snr_db(egc_snr_db, n_ru: int):
    """Mean per-RU SNR when the combined SNR is split over ``n_ru`` branches."""
    return np.asarray(egc_snr_db, dtype=float) - 10.0 * math.log10(n_ru)


def _predict(model, split: SplitData) -> np.ndarray:
    if isinstance(model, nn.Module):
        return np.asarray(model.predict(split.x))
    if callable(model):
        out = np.asarray(model(split))
        if out.ndim == 2:
            if out.shape[1] != N_CLASSES:
                raise InvalidArgument(f"model emits {out.shape[1]} classes, expected {N_CLASSES}")
            out = out.argmax(axis=1)
        return out
    raise InvalidArgument("model must be an nn.Module or a callable over a split")


def report_from_predictions(pred, split: SplitData, label: str = "model") -> EvalReport:
    pred = np.asarray(pred)
    y = np.asarray(split.labels)
    if len(y) == 0:
        raise InvalidArgument("cannot evaluate an empty split")
    if pred.shape != y.shape:
        raise InvalidArgument(f"got {pred.shape} predictions for {y.shape} labels")
    if pred.min() < 0 or pred.max() >= N_CLASSES or y.min() < 0 or y.max() >= N_CLASSES:
        raise InvalidArgument("labels or predictions outside the modulation class set")
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(conf, (y, pred.astype(np.int64)), 1)
    snrs = np.unique(split.egc_snr_db)
    correct = pred == y
    acc = np.array([correct[split.egc_snr_db == s].mean() for s in snrs])
    counts = np.array([np.sum(split.egc_snr_db == s) for s in snrs])
    overall = float(np.trace(conf) / conf.sum())
    return EvalReport(overall, snrs, acc, counts, split.n_ru, conf, int(len(y)),
                      MonteCarloStats.from_runs([overall]), label)


def evaluate(model, test_split: SplitData, label: str | None = None) -> EvalReport:
    """Single deterministic pass over ``test_split``.

    ``model`` is either an assembled network (its ``predict`` is used) or a
    callable taking the split and returning class indices or 7-way scores.
    """
    if label is None:
        spec = getattr(model, "spec", None)
        label = spec.tag if spec is not None else getattr(model, "__name__", "model")
    return report_from_predictions(_predict(model, test_split), test_split, label)


def combine_reports(reports, digests=()) -> EvalReport:
    """Pool equally sized runs: summed confusion, averaged curves, per-run statistics."""
    reports = list(reports)
    if not reports:
        raise InvalidArgument("no reports to combine")
    first = reports[0]
    conf = sum(r.confusion for r in reports)
    counts = sum(r.count_by_snr for r in reports)
    acc = sum(r.acc_by_snr * r.count_by_snr for r in reports) / counts
    return EvalReport(
        float(np.trace(conf) / conf.sum()), first.snr_db, acc, counts, first.n_ru, conf,
        int(sum(r.n_records for r in reports)),
        MonteCarloStats.from_runs([r.accuracy for r in reports], digests), first.label)


# ---------------------------------------------------------------------------
# Monte-Carlo


@dataclass
class PipelineConfig:
    """Everything needed to train and test one approach from scratch."""

    approach: str                    # central | distributed | hybrid
    spec: ModelSpec                  # central spec, or the RU spec for ensembles
    dataset: object                  # DataSplits or DatasetManifest
    hp: Hyperparams = field(default_factory=Hyperparams)
    n_ru: int = 3
    du_spec: ModelSpec | None = None
    ru_model: object = None          # reuse a trained RU-model (skips its phase)

    def __post_init__(self):
        if self.approach not in ("central", "distributed", "hybrid"):
            raise InvalidArgument(f"unknown approach {self.approach!r}")
        if self.approach == "hybrid" and self.du_spec is None:
            raise InvalidArgument("hybrid approach needs du_spec")

    def train(self, hp: Hyperparams):
        data = as_splits(self.dataset)
        self.dataset = data
        if self.approach == "central":
            return train_central_pipeline(self.spec.with_kind("central", n_ru=self.n_ru), data, hp)
        if self.approach == "distributed":
            return train_distributed_pipeline(self.spec.with_kind("ru", n_ru=self.n_ru), self.n_ru,
                                              data, hp, ru_model=self.ru_model)
        return train_hybrid_pipeline(self.spec.with_kind("ru", n_ru=self.n_ru),
                                     self.du_spec.with_kind("du_feature", n_ru=self.n_ru),
                                     self.n_ru, data, hp, ru_model=self.ru_model)

    def run(self, run_index: int):
        hp = replace(self.hp, seed=run_seed(self.hp.seed, run_index))
        pipeline = self.train(hp)
        return pipeline.model, self.dataset.test


def run_seed(base_seed: int, run_index: int) -> int:
    return seeding.derive_seed(base_seed, seeding.ROLE_MC, run_index)


def monte_carlo_evaluate(pipeline_config, n_runs: int) -> EvalReport:
    """Repeat train+evaluate with run-indexed seeds and pool the results.

    ``pipeline_config`` needs a ``run(run_index) -> (model, test_split)``
    method; :class:`PipelineConfig` provides one.
    """
    if n_runs < 1:
        raise InvalidArgument("n_runs must be >= 1")
    reports, digests = [], []
    for r in range(n_runs):
        try:
            model, split = pipeline_config.run(r)
            reports.append(evaluate(model, split))
            digests.append(bundle_of(model).digest() if isinstance(model, nn.Module) else "")
        except Exception as e:
            raise PartialResultsError(f"Monte-Carlo run {r} failed: {e}", reports) from e
    return combine_reports(reports, digests)


# ---------------------------------------------------------------------------
# reference curves


@dataclass(frozen=True)
class ReferenceCurve:
    tag: str
    label: str
    points: tuple          # ((mean_snr_db, accuracy_pct), ...)

    @property
    def snr_db(self):
        return np.array([p[0] for p in self.points])

    @property
    def accuracy_pct(self):
        return np.array([p[1] for p in self.points])


def reference_bytes() -> bytes:
    return resources.files("cfamc.data").joinpath(REFERENCE_FILE).read_bytes()


@lru_cache(maxsize=1)
def reference_curves() -> tuple:
    raw = reference_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    if digest != REFERENCE_SHA256:
        raise CorruptDataError(f"reference curve data checksum mismatch ({digest})", REFERENCE_FILE)
    doc = json.loads(raw)
    return tuple(
        ReferenceCurve(c["tag"], c["label"], tuple((float(x), float(y)) for x, y in c["points"]))
        for c in doc["curves"])


# ---------------------------------------------------------------------------
# report files

CSV_NAME = "report.csv"
SUMMARY_NAME = "summary.json"
PLOT_NAME = "accuracy_vs_mean_snr.png"


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def emit_report(report, reference=(), out_dir=".") -> dict:
    """Write ``report.csv``, ``summary.json`` and the accuracy-vs-mean-SNR plot.

    ``report`` may be a single :class:`EvalReport` or a list of them. The CSV
    is long-format: one header row, then one row per curve point (measured
    against EGC SNR, measured against mean RU SNR, reference) and per
    confusion-matrix cell.
    """
    reports = [report] if isinstance(report, EvalReport) else list(report)
    reference = tuple(reference or ())
    out = Path(out_dir)
    classes = [s.name for s in ModulationScheme]
    rows = []
    for r in reports:
        for s, a, n in zip(r.snr_db, r.acc_by_snr, r.count_by_snr):
            rows.append(["egc_curve", r.label, _fmt(s), _fmt(100.0 * a), int(n)])
        for s, a, n in zip(r.mean_ru_snr_db, r.acc_by_snr, r.count_by_snr):
            rows.append(["mean_snr_curve", r.label, _fmt(s), _fmt(100.0 * a), int(n)])
    for c in reference:
        for x, y in c.points:
            rows.append(["reference", c.tag, _fmt(x), _fmt(y), ""])
    for r in reports:
        for i in range(N_CLASSES):
            for j in range(N_CLASSES):
                rows.append(["confusion", r.label, classes[i], classes[j], int(r.confusion[i, j])])
    paths = {"csv": out / CSV_NAME, "summary": out / SUMMARY_NAME, "plot": out / PLOT_NAME}
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(paths["csv"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "tag", "x", "y", "value"])
            w.writerows(rows)
        summary = {"reports": [r.to_dict() for r in reports],
                   "reference_tags": [c.tag for c in reference],
                   "reference_sha256": REFERENCE_SHA256 if reference else None}
        paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        _plot(reports, reference, paths["plot"])
    except OSError as e:
        raise PersistenceError(f"cannot write report: {e}", out) from e
    return paths


def _plot(reports, reference, path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.8), dpi=100)
    for c in reference:
        ax.plot(c.snr_db, c.accuracy_pct, linestyle="--", linewidth=1, label=f"reference: {c.tag}")
    for r in reports:
        ax.plot(r.mean_ru_snr_db, 100.0 * r.acc_by_snr, marker="o", linewidth=1.5, label=r.label)
    ax.set_xlabel("Mean-SNR (dB)")
    ax.set_ylabel("Accuracy (%)")
    ax.grid(True)
    ax.legend(fontsize="x-small", loc="lower right")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
