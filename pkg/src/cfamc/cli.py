"""Command-line entry point: ``cfamc {gen-data,train,flops,eval,report}``.

One JSON config drives a whole experiment; ``--preset`` supplies defaults that
the config file and flags override. Exit codes: 0 success, 2 invalid config,
3 I/O failure, 4 training divergence, 5 checkpoint/spec mismatch.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import MANIFEST_NAME, DatasetConfig, describe_dataset, generate_dataset, load_manifest
from .errors import (
    CfamcError,
    CorruptDataError,
    DivergenceError,
    IncompatibleSpecError,
    InvalidArgument,
    NotFound,
    PersistenceError,
    PhaseError,
)
from .evaluation import (
    EvalReport,
    MonteCarloStats,
    PipelineConfig,
    emit_report,
    evaluate,
    monte_carlo_evaluate,
    reference_curves,
)
from .flops import grid_rows, write_grid_csv
from .model import (
    INPUT_SIZES,
    STACK_RANGE,
    Classifier,
    DUFeatureModel,
    ModelSpec,
    assemble_distributed,
    assemble_hybrid,
    build_classifier,
    build_du_feature_model,
    freeze,
    load_bundle,
    load_checkpoint,
)
from .training import Hyperparams, as_splits, write_run_dir

log = logging.getLogger("cfamc")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_CHECKPOINT = 0, 2, 3, 4, 5

PRESETS = {
    "desk": {
        "dataset": DatasetConfig.desk().to_dict(),
        "dataset_dir": None,
        "output_dir": "runs/desk",
        "approach": "central",
        "grid": {"input_sizes": [128], "stacks": [4]},
        "du": {"input_size": 128, "n_stacks": 4},
        "hyperparams": asdict(Hyperparams(batch_size=16)),
        "mc_runs": 2,
    },
    "paper": {
        "dataset": DatasetConfig.paper().to_dict(),
        "dataset_dir": None,
        "output_dir": "runs/paper",
        "approach": "central",
        "grid": {"input_sizes": list(INPUT_SIZES), "stacks": list(STACK_RANGE)},
        "du": {"input_size": 256, "n_stacks": 7},
        "hyperparams": asdict(Hyperparams()),
        "mc_runs": 16,
    },
}


class ConfigError(CfamcError):
    pass


@dataclass
class RunConfig:
    dataset: DatasetConfig
    dataset_dir: Path
    output_dir: Path
    approach: str
    input_sizes: list
    stacks: list
    du_input_size: int
    du_n_stacks: int
    n_ru: int
    hp: Hyperparams
    mc_runs: int
    ru_checkpoint: Path | None = None
    raw: dict = field(default_factory=dict)

    def grid(self):
        return [(n, s) for n in self.input_sizes for s in self.stacks]


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_run_config(path=None, preset: str | None = None, out: str | None = None,
                    seed: int | None = None) -> RunConfig:
    raw = copy.deepcopy(PRESETS[preset or "desk"])
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            user = json.loads(path.read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
        if "preset" in user and preset is None:
            raw = copy.deepcopy(PRESETS[user["preset"]])
        raw = _merge(raw, {k: v for k, v in user.items() if k != "preset"})
        base_dir = path.parent
    if out is not None:
        raw["output_dir"] = out
    if seed is not None:
        raw["hyperparams"]["seed"] = int(seed)
        raw["dataset"]["master_seed"] = int(seed)
    try:
        cfg = RunConfig(
            dataset=DatasetConfig.from_dict(raw["dataset"]),
            dataset_dir=base_dir / (raw.get("dataset_dir") or Path(raw["output_dir"]) / "data"),
            output_dir=base_dir / raw["output_dir"],
            approach=raw["approach"],
            input_sizes=[int(v) for v in raw["grid"]["input_sizes"]],
            stacks=[int(v) for v in raw["grid"]["stacks"]],
            du_input_size=int(raw["du"]["input_size"]),
            du_n_stacks=int(raw["du"]["n_stacks"]),
            n_ru=int(raw.get("n_ru", raw["dataset"].get("n_ru", 3))),
            hp=Hyperparams(**raw["hyperparams"]),
            mc_runs=int(raw.get("mc_runs", 1)),
            ru_checkpoint=(base_dir / raw["ru_checkpoint"]) if raw.get("ru_checkpoint") else None,
            raw=raw,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid config: {e}") from e
    if cfg.approach not in ("central", "distributed", "hybrid"):
        raise ConfigError(f"unknown approach {cfg.approach!r}")
    bad = [n for n in cfg.input_sizes + [cfg.du_input_size] if n not in INPUT_SIZES]
    bad += [s for s in cfg.stacks + [cfg.du_n_stacks] if s not in STACK_RANGE]
    if bad or not cfg.input_sizes or not cfg.stacks:
        raise ConfigError(f"grid values outside {INPUT_SIZES} x {STACK_RANGE}: {bad}")
    if cfg.mc_runs < 1:
        raise ConfigError("mc_runs must be >= 1")
    if cfg.ru_checkpoint is not None and not cfg.ru_checkpoint.exists():
        raise ConfigError(f"ru_checkpoint {cfg.ru_checkpoint} does not exist")
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    cfg = load_run_config(args.config, args.preset, args.out, args.seed)
    if args.dry_run:
        m = describe_dataset(cfg.dataset)
        print(f"records: {m.total_records} (dry run)")
    else:
        m = generate_dataset(cfg.dataset, cfg.dataset_dir)
        print(f"manifest: {m.root / MANIFEST_NAME}")
        print(f"records: {m.total_records}")
    for split, n in m.record_counts.items():
        print(f"  {split}: {n}")
    return EXIT_OK


def _manifest(cfg: RunConfig):
    path = cfg.dataset_dir / MANIFEST_NAME
    if not path.exists():
        raise PersistenceError("dataset manifest not found; run gen-data first", path)
    return load_manifest(path)


def _load_ru(path: Path) -> Classifier:
    bundle = load_checkpoint(path)
    spec = ModelSpec(**bundle.meta["spec"])
    ru = freeze(build_classifier(spec.with_kind("ru"), 0))
    load_bundle(ru, bundle)
    return freeze(ru)


def _pipeline_config(cfg: RunConfig, data, n: int, s: int) -> PipelineConfig:
    spec = ModelSpec("central", n, s, cfg.n_ru)
    du = ModelSpec("du_feature", cfg.du_input_size, cfg.du_n_stacks, cfg.n_ru)
    ru_model = _load_ru(cfg.ru_checkpoint) if cfg.ru_checkpoint is not None else None
    return PipelineConfig(cfg.approach, spec, data, cfg.hp, cfg.n_ru,
                          du if cfg.approach == "hybrid" else None, ru_model)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.preset, args.out, args.seed)
    manifest = _manifest(cfg)
    frame_len = manifest.config.frame_len
    if cfg.approach == "hybrid" and cfg.du_input_size > frame_len:
        raise ConfigError(f"du input size {cfg.du_input_size} exceeds frame length {frame_len}")
    if max(cfg.input_sizes) > frame_len:
        raise ConfigError(f"input size exceeds frame length {frame_len}")
    data = as_splits(manifest)
    for n, s in cfg.grid():
        pc = _pipeline_config(cfg, data, n, s)
        pipeline = pc.train(cfg.hp)
        run_dir = cfg.output_dir / f"{cfg.approach}_N{n}_S{s}"
        write_run_dir(run_dir, pipeline, cfg.hp, {"approach": cfg.approach, "phases_run": list(pipeline.results)})
        print(f"{run_dir}: phases {','.join(pipeline.results)}; "
              f"best val accuracy {pipeline.final.best_val_acc:.4f}")
    return EXIT_OK


def cmd_flops(args) -> int:
    cfg = load_run_config(args.config, args.preset, args.out, args.seed)
    approaches = ["central", "distributed"] + (["hybrid"] if args.hybrid else [])
    rows = grid_rows(cfg.input_sizes, cfg.stacks, approaches, cfg.n_ru,
                     du_pairs=[(cfg.du_input_size, cfg.du_n_stacks)])
    path = write_grid_csv(rows, cfg.output_dir / "flops.csv")
    print(f"flop report: {path}")
    for r in rows:
        print(f"  {r['approach']:<12} N={r['input_size']:<5} stacks={r['n_stacks']} "
              f"per_ru={r['per_ru_flops']} du={r['du_flops']} total={r['mflops']:.2f} MFLOPs")
    return EXIT_OK


def model_from_checkpoint(path):
    """Rebuild an assembled model from a checkpoint written by ``train``."""
    bundle = load_checkpoint(path)
    meta = bundle.meta.get("spec") if bundle.meta else None
    if not meta:
        raise IncompatibleSpecError(f"checkpoint {path} carries no model spec")
    spec = ModelSpec(**meta)
    if spec.kind == "central":
        model = build_classifier(spec, 0)
    elif spec.kind == "distributed_ensemble":
        ru = freeze(build_classifier(spec.with_kind("ru"), 0))
        model = assemble_distributed(ru, spec.n_ru)
    elif spec.kind == "hybrid_ensemble":
        ru = freeze(build_classifier(spec.with_kind("ru"), 0)) if spec.n_ru else None
        du = freeze(build_du_feature_model(spec.du_spec(), 0))
        model = assemble_hybrid(ru, du, spec.n_ru)
    else:
        raise IncompatibleSpecError(f"cannot evaluate a bare {spec.kind!r} checkpoint")
    return load_bundle(model, bundle)


def _oracle(split):
    return split.labels


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, args.preset, args.out, args.seed)
    manifest = _manifest(cfg)
    reference = () if args.no_reference else reference_curves()
    if args.self_test:
        test = as_splits(manifest, max_len=1).test
        report = evaluate(_oracle, test, label="oracle")
    elif cfg.mc_runs > 1 and args.checkpoint is None:
        data = as_splits(manifest)
        n, s = cfg.grid()[0]
        report = monte_carlo_evaluate(_pipeline_config(cfg, data, n, s), cfg.mc_runs)
    else:
        if args.checkpoint is None:
            raise ConfigError("eval needs --checkpoint when mc_runs == 1")
        try:
            model = model_from_checkpoint(args.checkpoint)
        except (IncompatibleSpecError, CorruptDataError, InvalidArgument, TypeError) as e:
            print(f"error: checkpoint mismatch: {e}", file=sys.stderr)
            return EXIT_CHECKPOINT
        spec = model.spec
        if spec is not None and spec.kind != "central" and spec.n_ru != manifest.config.n_ru:
            print(f"error: checkpoint expects {spec.n_ru} RUs, dataset has {manifest.config.n_ru}",
                  file=sys.stderr)
            return EXIT_CHECKPOINT
        report = evaluate(model, as_splits(manifest).test)
    paths = emit_report(report, reference, cfg.output_dir / "eval")
    print(f"accuracy: {report.accuracy:.4f} (mc runs: {report.mc.n_runs}, "
          f"mean {report.mc.mean:.4f}, std {report.mc.std:.4f})")
    for k, p in paths.items():
        print(f"{k}: {p}")
    return EXIT_OK


def _report_from_dict(d: dict) -> EvalReport:
    mc = d["monte_carlo"]
    return EvalReport(
        accuracy=d["accuracy"], snr_db=np.array(d["egc_snr_db"]),
        acc_by_snr=np.array(d["accuracy_by_snr"]), count_by_snr=np.array(d["count_by_snr"]),
        n_ru=d["n_ru"], confusion=np.array(d["confusion"]), n_records=d["n_records"],
        mc=MonteCarloStats(mc["n_runs"], mc["per_run"], mc["mean"], mc["std"], mc.get("digests", [])),
        label=d["label"])


def cmd_report(args) -> int:
    """Merge the summaries of earlier ``eval`` runs into one overlay report."""
    cfg = load_run_config(args.config, args.preset, args.out, args.seed)
    reports = []
    for p in args.summaries:
        try:
            doc = json.loads(Path(p).read_text())
        except OSError as e:
            raise PersistenceError(f"cannot read summary: {e}", p) from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p} is not a summary file: {e}") from e
        reports += [_report_from_dict(d) for d in doc["reports"]]
    if not reports:
        raise ConfigError("no summaries given")
    reference = () if args.no_reference else reference_curves()
    paths = emit_report(reports, reference, cfg.output_dir / "report")
    for k, p in paths.items():
        print(f"{k}: {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--seed", type=int, help="master seed for data and training")
    common.add_argument("--preset", choices=sorted(PRESETS), help="built-in defaults (desk)")
    common.add_argument("--no-reference", action="store_true", help="omit shipped reference curves")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cfamc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-data", parents=[common], help="generate the dataset")
    g.add_argument("--dry-run", action="store_true", help="report counts without writing")
    g.set_defaults(func=cmd_gen_data)
    sub.add_parser("train", parents=[common], help="train the configured approach").set_defaults(func=cmd_train)
    f = sub.add_parser("flops", parents=[common], help="FLOP report over the model grid")
    f.add_argument("--hybrid", action="store_true", help="include hybrid rows")
    f.set_defaults(func=cmd_flops)
    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or run Monte-Carlo")
    e.add_argument("--checkpoint", type=Path)
    e.add_argument("--self-test", action="store_true", help="evaluate a label-reading oracle")
    e.set_defaults(func=cmd_eval)
    r = sub.add_parser("report", parents=[common], help="overlay saved eval summaries")
    r.add_argument("summaries", nargs="+")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidArgument, NotFound) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PhaseError as e:
        if isinstance(e.cause, DivergenceError):
            print(f"error: training diverged: {e}", file=sys.stderr)
            return EXIT_DIVERGED
        if isinstance(e.cause, (InvalidArgument, NotFound)):
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        raise
    except DivergenceError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (PersistenceError, CorruptDataError, OSError) as e:
        path = getattr(e, "path", None) or getattr(e, "filename", None)
        print(f"error: I/O failure at {path}: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
