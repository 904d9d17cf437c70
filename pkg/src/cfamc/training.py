"""Supervised training with early stopping and the multi-phase pipelines.

Pipelines never touch the global torch RNG: weight initialization and batch
shuffling are driven by seeds derived from ``Hyperparams.seed`` and a fixed
phase identifier, so independent phases can run in any order.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import seeding
from .dataset import DatasetManifest, SplitData, load_arrays
from .errors import ContractViolation, DivergenceError, InvalidArgument, PhaseError, PersistenceError
from .model import (
    Classifier,
    DUFeatureModel,
    DistributedModel,
    HybridModel,
    ModelSpec,
    WeightBundle,
    assemble_distributed,
    assemble_hybrid,
    build_classifier,
    build_du_feature_model,
    bundle_of,
    save_checkpoint,
    transfer_weights,
)

# phase identifiers mixed into the per-phase seeds
PHASE_IDS = {"central": 1, "ru_donor": 2, "du_donor": 3, "ru_model": 4,
             "du_model": 5, "voting": 6}


@dataclass(frozen=True)
class Hyperparams:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    loss: str = "cross_entropy"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise InvalidArgument("epochs, batch_size and learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidArgument(f"unknown optimizer {self.optimizer!r}")
        if self.loss != "cross_entropy":
            raise InvalidArgument("only cross_entropy loss is supported")

    def phase_seed(self, phase: str, role: int) -> int:
        return seeding.derive_seed(self.seed, role, PHASE_IDS[phase])


@dataclass
class TrainResult:
    train_loss: list
    val_acc: list
    best_epoch: int
    best_weights: WeightBundle
    wall_time: list = field(default_factory=list)

    @property
    def best_val_acc(self) -> float:
        return self.val_acc[self.best_epoch - 1]


def select_best_epoch(val_acc) -> int:
    """1-based epoch of the highest validation accuracy; ties go to the earliest."""
    if len(val_acc) == 0:
        raise InvalidArgument("no validation accuracies recorded")
    return int(np.argmax(np.asarray(val_acc))) + 1


def _as_xy(data):
    if isinstance(data, SplitData):
        x, y = data.x, data.labels
    else:
        x, y = data
    x = x if isinstance(x, torch.Tensor) else torch.from_numpy(np.ascontiguousarray(x))
    y = y if isinstance(y, torch.Tensor) else torch.from_numpy(np.asarray(y, dtype=np.int64))
    if len(x) == 0 or len(x) != len(y):
        raise InvalidArgument("split must be non-empty with one label per input")
    return x, y


def _match_dtype(model: nn.Module, x: torch.Tensor) -> torch.Tensor:
    dt = next(model.parameters()).dtype
    if x.is_complex():
        return x.to(torch.complex128 if dt == torch.float64 else torch.complex64)
    return x.to(dt)


def accuracy(model: nn.Module, x, y, batch_size: int = 512) -> float:
    x, y = _as_xy((x, y))
    correct = 0
    with torch.no_grad():
        for a in range(0, len(y), batch_size):
            logits = model(_match_dtype(model, x[a:a + batch_size]))
            correct += int((logits.argmax(-1) == y[a:a + batch_size]).sum())
    return correct / len(y)


def train_supervised(model: nn.Module, train_split, val_split, hp: Hyperparams,
                     shuffle_seed: int | None = None) -> TrainResult:
    """Mini-batch cross-entropy training with validation-based model selection.

    Only parameters with ``requires_grad`` are handed to the optimizer, so
    frozen tensors are never written. On return the model holds the weights
    of the best validation epoch.
    """
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise ContractViolation("model has no trainable parameters")
    x_tr, y_tr = _as_xy(train_split)
    x_va, y_va = _as_xy(val_split)
    x_tr = _match_dtype(model, x_tr)
    if hp.optimizer == "adam":
        opt = torch.optim.Adam(params, lr=hp.learning_rate)
    else:
        opt = torch.optim.SGD(params, lr=hp.learning_rate)
    seed = hp.seed if shuffle_seed is None else shuffle_seed
    gen = torch.Generator().manual_seed(seeding.derive_seed(seed, seeding.ROLE_SHUFFLE) >> 1)

    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    losses, accs, times = [], [], []
    best_acc, best_state = -math.inf, None
    start = time.perf_counter()
    n = len(y_tr)
    for epoch in range(1, hp.epochs + 1):
        model.train()
        perm = torch.randperm(n, generator=gen)
        total, seen = 0.0, 0
        for b, a in enumerate(range(0, n, hp.batch_size)):
            idx = perm[a:a + hp.batch_size]
            loss = F.cross_entropy(model(x_tr[idx]), y_tr[idx])
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}",
                                      epoch=epoch, batch=b)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            seen += len(idx)
        model.eval()
        acc = accuracy(model, x_va, y_va)
        losses.append(total / seen)
        accs.append(acc)
        times.append(time.perf_counter() - start)
        if acc > best_acc:
            best_acc = acc
            best_state = {k: p.detach().clone() for k, p in named}
    with torch.no_grad():
        for k, p in named:
            p.copy_(best_state[k])
    return TrainResult(losses, accs, select_best_epoch(accs), bundle_of(model), times)


# ---------------------------------------------------------------------------
# data plumbing


@dataclass
class DataSplits:
    train: SplitData
    val: SplitData
    test: SplitData

    @property
    def n_ru(self) -> int:
        return self.train.n_ru


def as_splits(dataset, max_len: int | None = None) -> DataSplits:
    if isinstance(dataset, DataSplits):
        return dataset
    if isinstance(dataset, DatasetManifest):
        return DataSplits(*(load_arrays(dataset, s, max_len) for s in ("train", "val", "test")))
    raise InvalidArgument(f"cannot use {type(dataset).__name__} as a dataset")


def frozen_features(model: nn.Module, x, batch_size: int = 512) -> torch.Tensor:
    """Outputs of the frozen part of an ensemble, computed once for voting-head training."""
    x, _ = _as_xy((x, np.zeros(len(x), dtype=np.int64)))
    out = []
    with torch.no_grad():
        for a in range(0, len(x), batch_size):
            out.append(model.features(_match_dtype(model, x[a:a + batch_size])))
    return torch.cat(out)


def _phase(name: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except PhaseError:
        raise
    except Exception as e:
        if isinstance(e, DivergenceError):
            e.phase = name
        raise PhaseError(name, e) from e


# ---------------------------------------------------------------------------
# pipelines


@dataclass
class PipelineResult:
    model: nn.Module
    results: dict                       # phase name -> TrainResult
    ru_model: Optional[Classifier] = None
    du_model: Optional[DUFeatureModel] = None
    donors: dict = field(default_factory=dict)

    @property
    def final(self) -> TrainResult:
        return list(self.results.values())[-1]


def _train_central(spec: ModelSpec, data: DataSplits, hp: Hyperparams, phase: str):
    model = build_classifier(spec, hp.phase_seed(phase, seeding.ROLE_INIT))
    result = train_supervised(model, data.train, data.val, hp,
                              shuffle_seed=hp.phase_seed(phase, seeding.ROLE_SHUFFLE))
    return model, result


def train_central_pipeline(spec: ModelSpec, dataset, hp: Hyperparams) -> PipelineResult:
    """One training run of the EGC central model."""
    if spec.kind != "central":
        raise InvalidArgument("central pipeline needs a central spec")
    data = as_splits(dataset)
    model, result = _phase("central", _train_central, spec, data, hp, "central")
    return PipelineResult(model, {"central": result})


def train_ru_model(ru_spec: ModelSpec, dataset, hp: Hyperparams):
    """Train a central donor of the RU shape and distil it into a frozen RU-model."""
    data = as_splits(dataset)
    donor_spec = ru_spec.with_kind("central")
    donor, result = _phase("ru_donor", _train_central, donor_spec, data, hp, "ru_donor")
    ru = build_classifier(ru_spec.with_kind("ru"), hp.phase_seed("ru_model", seeding.ROLE_INIT))
    transfer_weights(donor, ru, ("feature_extraction", "decision"))
    return ru, donor, result


def train_du_model(du_spec: ModelSpec, dataset, hp: Hyperparams):
    """Train a central donor of the DU shape and keep its frozen feature extractor."""
    data = as_splits(dataset)
    donor_spec = du_spec.with_kind("central")
    donor, result = _phase("du_donor", _train_central, donor_spec, data, hp, "du_donor")
    du = build_du_feature_model(du_spec.with_kind("du_feature"),
                                hp.phase_seed("du_model", seeding.ROLE_INIT))
    transfer_weights(donor, du, ("feature_extraction",))
    return du, donor, result


def _train_voting(model, data: DataSplits, hp: Hyperparams) -> TrainResult:
    f_tr = frozen_features(model, data.train.x)
    f_va = frozen_features(model, data.val.x)
    return train_supervised(model.voting, (f_tr, data.train.labels), (f_va, data.val.labels), hp,
                            shuffle_seed=hp.phase_seed("voting", seeding.ROLE_SHUFFLE))


def train_distributed_pipeline(ru_spec: ModelSpec, n_ru: int, dataset, hp: Hyperparams,
                               ru_model: Classifier | None = None) -> PipelineResult:
    """Phase 1: RU-model via transfer from a central donor. Phase 2: voting head.

    Passing a trained ``ru_model`` skips phase 1 (e.g. when only ``n_ru``
    changes).
    """
    data = as_splits(dataset)
    if data.n_ru != n_ru:
        raise InvalidArgument(f"dataset has {data.n_ru} RUs, model expects {n_ru}")
    results, donors = {}, {}
    if ru_model is None:
        ru_model, donor, res = train_ru_model(ru_spec, data, hp)
        results["ru_donor"] = res
        donors["ru"] = donor
    model = assemble_distributed(ru_model, n_ru, hp.phase_seed("voting", seeding.ROLE_INIT))
    results["voting"] = _phase("voting", _train_voting, model, data, hp)
    return PipelineResult(model, results, ru_model=ru_model, donors=donors)


def train_hybrid_pipeline(ru_spec: ModelSpec, du_spec: ModelSpec, n_ru: int, dataset,
                          hp: Hyperparams, ru_model: Classifier | None = None,
                          du_model: DUFeatureModel | None = None) -> PipelineResult:
    """Phases 1 (RU-model) and 2 (DU feature extractor) are independent; phase 3 trains voting."""
    data = as_splits(dataset)
    if n_ru and data.n_ru != n_ru:
        raise InvalidArgument(f"dataset has {data.n_ru} RUs, model expects {n_ru}")
    frame_len = data.train.x.shape[-1]
    for size, what in ((du_spec.input_size, "DU"), (ru_spec.input_size if n_ru else 0, "RU")):
        if size > frame_len:
            raise InvalidArgument(f"{what} input size {size} exceeds frame length {frame_len}")
    results, donors = {}, {}
    if ru_model is None and n_ru > 0:
        ru_model, donors["ru"], results["ru_donor"] = train_ru_model(ru_spec, data, hp)
    if du_model is None:
        du_model, donors["du"], results["du_donor"] = train_du_model(du_spec, data, hp)
    model = assemble_hybrid(ru_model, du_model, n_ru, hp.phase_seed("voting", seeding.ROLE_INIT),
                            frame_len=frame_len)
    results["voting"] = _phase("voting", _train_voting, model, data, hp)
    return PipelineResult(model, results, ru_model=ru_model, du_model=du_model, donors=donors)


# ---------------------------------------------------------------------------
# run directory


def write_run_dir(out_dir, pipeline: PipelineResult, hp: Hyperparams, extra: dict | None = None) -> Path:
    """Hyperparameter record, per-phase metrics CSV and checkpoints."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        record = {"hyperparams": asdict(hp),
                  "spec": getattr(pipeline.model, "spec", None) and pipeline.model.spec.to_dict(),
                  "phases": {k: {"best_epoch": r.best_epoch, "best_val_acc": r.best_val_acc}
                             for k, r in pipeline.results.items()},
                  "torch_version": torch.__version__,
                  "nondeterminism": "CPU kernels; results may differ across torch builds or thread counts"}
        record.update(extra or {})
        (out / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        for phase, r in pipeline.results.items():
            with open(out / f"metrics_{phase}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["epoch", "train_loss", "val_acc", "wall_time"])
                for i, (l, a, t) in enumerate(zip(r.train_loss, r.val_acc, r.wall_time), 1):
                    w.writerow([i, f"{l:.6f}", f"{a:.6f}", f"{t:.3f}"])
    except OSError as e:
        raise PersistenceError(f"cannot write run directory: {e}", out) from e
    save_checkpoint(bundle_of(pipeline.model), out / "model.ckpt")
    if pipeline.ru_model is not None:
        save_checkpoint(bundle_of(pipeline.ru_model), out / "ru_model.ckpt")
    if pipeline.du_model is not None:
        save_checkpoint(bundle_of(pipeline.du_model), out / "du_model.ckpt")
    return out
