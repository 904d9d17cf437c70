import csv
import json

import pytest

from cfamc import cli
from cfamc.errors import DivergenceError
from cfamc.model import ModelSpec, build_classifier, bundle_of, save_checkpoint

SMALL_DATA = dict(schemes=["BPSK", "QPSK"], snr_grid_db=[10.0, 30.0], frames_per_pair=16,
                  frame_len=128, split={"train": 10, "val": 3, "test": 3})


def write_config(path, **over):
    cfg = {"preset": "desk", "dataset": dict(SMALL_DATA), "grid": {"input_sizes": [128], "stacks": [4]},
           "hyperparams": {"epochs": 2, "batch_size": 8}, "mc_runs": 1, "output_dir": "out"}
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def run(capsys):
    def _run(*argv):
        code = cli.main([str(a) for a in argv])
        out = capsys.readouterr()
        return code, out.out, out.err
    return _run


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A small dataset plus central and distributed runs, built once through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "c.json")
    assert cli.main(["gen-data", "--config", str(cfg)]) == 0
    assert cli.main(["train", "--config", str(cfg)]) == 0
    dcfg = write_config(root / "d.json", approach="distributed")
    assert cli.main(["train", "--config", str(dcfg)]) == 0
    return root


def test_desk_dry_run_counts(run, tmp_path):
    code, out, _ = run("gen-data", "--preset", "desk", "--dry-run", "--out", tmp_path)
    assert code == 0 and "records: 2304" in out
    assert "train: 1728" in out


def test_paper_dry_run_counts(run, tmp_path):
    code, out, _ = run("gen-data", "--preset", "paper", "--dry-run", "--out", tmp_path)
    assert code == 0 and "records: 150528" in out


def test_flops_grid(run, tmp_path):
    code, out, _ = run("flops", "--preset", "paper", "--out", tmp_path)
    assert code == 0
    lines = (tmp_path / "flops.csv").read_text().splitlines()
    rows = list(csv.DictReader(lines[1:]))
    central = [r for r in rows if r["approach"] == "central"]
    dist = [r for r in rows if r["approach"] == "distributed"]
    assert len(central) == 16 and len(dist) == 16
    row = next(r for r in central if (r["input_size"], r["n_stacks"]) == ("512", "4"))
    assert abs(float(row["mflops"]) - 12.53) <= 0.25 * 12.53
    assert all(int(r["per_ru_flops"]) > 0 and int(r["grand_total_flops"]) > 0 for r in dist)


def test_flops_with_hybrid(run, tmp_path):
    code, _, _ = run("flops", "--preset", "desk", "--hybrid", "--out", tmp_path)
    rows = list(csv.DictReader((tmp_path / "flops.csv").read_text().splitlines()[1:]))
    assert code == 0 and [r["approach"] for r in rows] == ["central", "distributed", "hybrid"]


def test_self_test_and_reference_flag(run, trained):
    cfg = trained / "c.json"
    code, out, _ = run("eval", "--config", cfg, "--self-test")
    assert code == 0 and "accuracy: 1.0000" in out
    rows = list(csv.reader((trained / "out/eval/report.csv").read_text().splitlines()))
    assert sum(r[0] == "reference" for r in rows) == 84
    code, _, _ = run("eval", "--config", cfg, "--self-test", "--no-reference")
    rows = list(csv.reader((trained / "out/eval/report.csv").read_text().splitlines()))
    assert code == 0 and not any(r[0] == "reference" for r in rows)


def test_train_writes_run_directory(trained):
    run_dir = trained / "out" / "central_N128_S4"
    record = json.loads((run_dir / "run.json").read_text())
    assert record["phases_run"] == ["central"]
    assert (run_dir / "metrics_central.csv").exists() and (run_dir / "model.ckpt").exists()


def test_eval_checkpoints(run, trained):
    for name in ("central", "distributed"):
        ckpt = trained / "out" / f"{name}_N128_S4" / "model.ckpt"
        code, out, _ = run("eval", "--config", trained / "c.json", "--checkpoint", ckpt)
        assert code == 0 and "accuracy:" in out
    summary = json.loads((trained / "out/eval/summary.json").read_text())
    assert summary["reports"][0]["n_records"] == 2 * 2 * 3


def test_report_merges_summaries(run, trained, tmp_path):
    code, _, _ = run("eval", "--config", trained / "c.json", "--self-test")
    src = tmp_path / "s.json"
    src.write_bytes((trained / "out/eval/summary.json").read_bytes())
    code, out, _ = run("report", "--config", trained / "c.json", "--out", tmp_path / "r", src, src)
    assert code == 0
    summary = json.loads((tmp_path / "r/report/summary.json").read_text())
    assert len(summary["reports"]) == 2


def test_reusing_ru_checkpoint_runs_only_voting_with_six_rus(run, trained):
    ru_ckpt = trained / "out" / "distributed_N128_S4" / "ru_model.ckpt"
    cfg = write_config(trained / "six.json", approach="distributed", output_dir="six",
                       dataset={"n_ru": 6}, ru_checkpoint=str(ru_ckpt))
    assert run("gen-data", "--config", cfg)[0] == 0
    code, out, _ = run("train", "--config", cfg)
    assert code == 0 and "phases voting;" in out
    record = json.loads((trained / "six/distributed_N128_S4/run.json").read_text())
    assert record["phases_run"] == ["voting"] and record["spec"]["n_ru"] == 6
    # a 6-RU ensemble cannot be evaluated on 3-RU data
    code, _, err = run("eval", "--config", trained / "c.json",
                       "--checkpoint", trained / "six/distributed_N128_S4/model.ckpt")
    assert code == 5 and "RUs" in err


def test_hybrid_du_longer_than_frames_is_config_error(run, trained):
    cfg = write_config(trained / "h.json", approach="hybrid", du={"input_size": 256, "n_stacks": 4})
    code, _, err = run("train", "--config", cfg)
    assert code == 2 and "frame length" in err


@pytest.mark.parametrize("over", [{"grid": {"input_sizes": [300], "stacks": [4]}},
                                  {"approach": "federated"}, {"mc_runs": 0},
                                  {"hyperparams": {"epochs": 0}}, {"ru_checkpoint": "missing.ckpt"}])
def test_invalid_configs_exit_2(run, tmp_path, over):
    code, _, err = run("train", "--config", write_config(tmp_path / "bad.json", **over))
    assert code == 2 and err.startswith("error:")


def test_malformed_json_exit_2(run, tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    assert run("gen-data", "--config", tmp_path / "bad.json")[0] == 2


def test_unwritable_output_exit_3(run, tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    code, _, err = run("gen-data", "--preset", "desk", "--out", blocker / "out")
    assert code == 3 and str(blocker) in err


def test_missing_dataset_exit_3(run, tmp_path):
    code, _, err = run("train", "--preset", "desk", "--out", tmp_path / "nowhere")
    assert code == 3 and "manifest" in err


def test_divergence_exit_4(run, trained, monkeypatch):
    def diverge(*a, **k):
        raise DivergenceError("non-finite loss", epoch=1, batch=0)
    monkeypatch.setattr("cfamc.training.train_supervised", diverge)
    cfg = write_config(trained / "div.json", output_dir="div", dataset_dir="out/data")
    code, _, err = run("train", "--config", cfg)
    assert code == 4 and "diverged" in err


def test_checkpoint_without_assembly_exit_5(run, trained, tmp_path):
    bare = save_checkpoint(bundle_of(build_classifier(ModelSpec("ru", 128, 4))), tmp_path / "ru.ckpt")
    assert run("eval", "--config", trained / "c.json", "--checkpoint", bare)[0] == 5
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes(b"CFAMCWB1\x00")
    assert run("eval", "--config", trained / "c.json", "--checkpoint", broken)[0] == 5


def test_eval_without_checkpoint_or_runs_exit_2(run, trained):
    assert run("eval", "--config", trained / "c.json")[0] == 2


def test_seed_flag_changes_data(run, tmp_path):
    cfg = write_config(tmp_path / "c.json")
    run("gen-data", "--config", cfg, "--out", tmp_path / "a")
    run("gen-data", "--config", cfg, "--out", tmp_path / "b", "--seed", 9)
    a = json.loads((tmp_path / "a/data/manifest.json").read_text())
    b = json.loads((tmp_path / "b/data/manifest.json").read_text())
    assert a["checksums"] != b["checksums"]
