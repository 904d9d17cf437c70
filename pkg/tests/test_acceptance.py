"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict that is printed in the
terminal summary (and to stdout when run with ``-s``).
"""

import csv
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from cfamc import cli
from cfamc.dataset import SPLITS, DatasetConfig, describe_dataset, generate_dataset, read_records, \
    split_membership, synthesize_record
from cfamc.evaluation import REFERENCE_SHA256, PipelineConfig, monte_carlo_evaluate, reference_bytes
from cfamc.flops import estimate_model_flops, flops_conv, flops_dense
from cfamc.model import Classifier, ModelSpec, build_classifier, bundle_of, transfer_weights
from cfamc.signal import apply_channel, egc_combine, make_snr_plan, measure_snr, modulate
from cfamc.training import as_splits, train_distributed_pipeline, train_hybrid_pipeline

from .conftest import ACCEPTANCE_LINES
from .test_flops import naive_conv_same, naive_dense


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


# --- 1: SNR-plan exactness ------------------------------------------------------


def test_criterion_1_snr_plan():
    t0 = time.perf_counter()
    clean = modulate("QPSK", 100_000, seed=1)
    worst_rel, worst_db, cases = 0.0, 0.0, 0
    for snr in range(-10, 31, 2):
        target = 10 ** (snr / 10)
        for n_ru in (1, 3, 6):
            for mode in ("equal", "diverse"):
                plan = make_snr_plan(float(snr), n_ru, mode, seed=snr * 31 + n_ru)
                worst_rel = max(worst_rel, abs(plan.egc_snr_linear - target) / target,
                                abs(plan.mean_ru_snr_linear - target / n_ru) / (target / n_ru))
                branches = [apply_channel(clean, plan.amplitudes[i], plan.noise_vars[i],
                                          seed=1000 * cases + i) for i in range(n_ru)]
                measured = measure_snr(clean, egc_combine(branches), sum(plan.amplitudes))
                worst_db = max(worst_db, abs(measured - snr))
                cases += 1
    elapsed = time.perf_counter() - t0
    ok = worst_rel <= 1e-9 and worst_db <= 0.15 and elapsed < 60
    verdict(1, ok, f"{cases} plans, max rel err {worst_rel:.1e}, max empirical dev "
                   f"{worst_db:.3f} dB, {elapsed:.1f}s")


# --- 2: dataset contract ---------------------------------------------------------


def test_criterion_2_dataset(tmp_path):
    full = describe_dataset(DatasetConfig())
    full_ok = full.total_records == 150_528 and all(
        (c["train"], c["val"], c["test"]) == (768, 128, 128) for c in full.cell_counts)
    t0 = time.perf_counter()
    desk = generate_dataset(DatasetConfig.desk(), tmp_path)
    gen_time = time.perf_counter() - t0
    cfg = desk.config
    desk_ok = desk.total_records == 2304 and all(
        (c["train"], c["val"], c["test"]) == (192, 32, 32) for c in desk.cell_counts)
    disjoint = True
    for conf, m in ((DatasetConfig(), full), (cfg, desk)):
        for s in conf.schemes:
            for snr in conf.snr_grid_db:
                mem = split_membership(m, s, snr)
                idx = np.concatenate([mem[k] for k in SPLITS])
                disjoint &= np.array_equal(np.sort(idx), np.arange(conf.frames_per_pair))
    n_snr = len(cfg.snr_grid_db)
    identical = 0
    for split in SPLITS:
        for rec in read_records(desk, split):
            rid = int(rec["record_id"])
            pair, f = divmod(rid, cfg.frames_per_pair)
            scheme_id, snr_idx = divmod(pair, n_snr)
            _, _, branches = synthesize_record(cfg, scheme_id, snr_idx, f)
            expected = np.stack([b.samples for b in branches]).astype(np.complex64)
            identical += np.asarray(rec["samples"]).tobytes() == expected.view(np.float32).tobytes()
    roundtrip = identical == 2304
    ok = full_ok and desk_ok and disjoint and roundtrip and gen_time < 120
    verdict(2, ok, f"default {full.total_records} records, desk {desk.total_records} "
                   f"({gen_time:.1f}s), disjoint={bool(disjoint)}, bit-exact {identical}/2304")


# --- 3: transfer and freeze fidelity --------------------------------------------------


def test_criterion_3_transfer(desk_manifest):
    t0 = time.perf_counter()
    donor = build_classifier(ModelSpec("central", 128, 4), 3)
    ru = build_classifier(ModelSpec("ru", 128, 4), 4)
    transfer_weights(donor, ru)
    rng = np.random.default_rng(0)
    x = (rng.standard_normal((100, 128)) + 1j * rng.standard_normal((100, 128))).astype(np.complex64)
    diff = float(np.max(np.abs(ru.predict_proba(x) - donor.predict_proba(x))))

    data = as_splits(desk_manifest)
    hp = replace(cli.load_run_config(preset="desk").hp, epochs=2)
    dist = train_distributed_pipeline(ModelSpec("ru", 128, 4), 3, data, hp)
    frozen_before = bundle_of(dist.ru_model)
    hyb = train_hybrid_pipeline(ModelSpec("ru", 128, 4), ModelSpec("du_feature", 128, 4), 3, data, hp,
                                ru_model=dist.ru_model)
    unchanged = bundle_of(dist.ru_model).equal_bytes(frozen_before)
    mb = bundle_of(hyb.model)
    for prefix, part in (("ru.", frozen_before), ("du.", bundle_of(hyb.du_model))):
        unchanged &= all(mb.tensors[prefix + k].tobytes() == v.tobytes() for k, v in part.tensors.items())
    donor_out = dist.donors["ru"].predict_proba(data.test.x[:100, 0])
    post = float(np.max(np.abs(dist.ru_model.predict_proba(data.test.x[:100, 0]) - donor_out)))
    elapsed = time.perf_counter() - t0
    ok = diff <= 1e-5 and post <= 1e-5 and unchanged and elapsed < 300
    verdict(3, ok, f"max |donor - recipient| {diff:.1e} (fresh), {post:.1e} (trained); "
                   f"frozen bytes unchanged={bool(unchanged)}, {elapsed:.1f}s")


# --- 4: gradient correctness --------------------------------------------------------


def test_criterion_4_gradients():
    t0 = time.perf_counter()
    torch.manual_seed(3)
    model = Classifier(8, 1, n_classes=2).double()
    rng = np.random.default_rng(5)
    x = torch.from_numpy(rng.standard_normal((5, 8)) + 1j * rng.standard_normal((5, 8)))
    y = torch.tensor([0, 1, 1, 0, 1])
    loss = lambda: F.cross_entropy(model(x), y)
    model.zero_grad()
    loss().backward()
    worst, eps = 0.0, 1e-6
    for _, p in model.named_parameters():
        flat, g = p.data.view(-1), p.grad.view(-1).clone()
        num = torch.empty_like(g)
        for i in range(flat.numel()):
            v = flat[i].item()
            with torch.no_grad():
                flat[i] = v + eps
                up = loss().item()
                flat[i] = v - eps
                down = loss().item()
                flat[i] = v
            num[i] = (up - down) / (2 * eps)
        rel = float(torch.linalg.norm(g - num) / (torch.linalg.norm(g) + torch.linalg.norm(num)))
        worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    verdict(4, worst <= 1e-3 and elapsed < 60,
            f"max relative gradient error {worst:.1e} over every parameter tensor, {elapsed:.1f}s")


# --- 5: FLOP estimator ------------------------------------------------------------------


def test_criterion_5_flops():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    _, dense_ops = naive_dense(rng.random(3), rng.random((3, 5)), rng.random(5))
    _, conv_ops = naive_conv_same(rng.random((4, 2, 1)).tolist(), rng.random((3, 1, 1, 2)).tolist(), [0, 0])
    counters = dense_ops == flops_dense(3, 5) and conv_ops == flops_conv(4, 2, 1, 2, 3, 1)
    central = lambda n, s: estimate_model_flops(ModelSpec("central", n, s)).mflops
    bands = {(128, 5): 3.23, (512, 4): 12.53, (1024, 5): 25.77}
    in_band = {k: abs(central(*k) - v) <= 0.25 * v for k, v in bands.items()}
    ratio = central(1024, 5) / central(128, 5)
    dist_ratios = [estimate_model_flops(ModelSpec("distributed_ensemble", n, s, 3)).mflops / central(n, s)
                   for n, s in ((128, 5), (256, 7), (512, 4), (1024, 5))]
    elapsed = time.perf_counter() - t0
    ok = (counters and all(in_band.values()) and 7 <= ratio <= 9
          and all(2.9 <= r <= 3.2 for r in dist_ratios) and elapsed < 10)
    shown = ", ".join(f"{n}/{s}={central(n, s):.2f}" for n, s in bands)
    verdict(5, ok, f"counters exact={counters}; central MFLOPs {shown}; 1024/128 ratio {ratio:.2f}; "
                   f"distributed/central {min(dist_ratios):.3f}..{max(dist_ratios):.3f}")


# --- 6 and 7: desk-scale learning ---------------------------------------------------------


@pytest.fixture(scope="module")
def desk_results(desk_manifest):
    preset = cli.load_run_config(preset="desk")
    data = as_splits(desk_manifest)
    spec = ModelSpec("central", preset.input_sizes[0], preset.stacks[0], preset.n_ru)
    du = ModelSpec("du_feature", preset.du_input_size, preset.du_n_stacks, preset.n_ru)
    t0 = time.perf_counter()
    out = {}
    for approach in ("central", "distributed", "hybrid"):
        pc = PipelineConfig(approach, spec, data, preset.hp, preset.n_ru,
                            du if approach == "hybrid" else None)
        out[approach] = monte_carlo_evaluate(pc, preset.mc_runs)
    out["elapsed"] = time.perf_counter() - t0
    return out


@pytest.mark.slow
def test_criterion_6_desk_learning(desk_results):
    c, d, h = (desk_results[k] for k in ("central", "distributed", "hybrid"))
    gap = abs(d.accuracy - c.accuracy)
    at30 = c.accuracy_at(30.0)
    ok = (at30 >= 0.90 and c.accuracy > 0.70 and gap <= 0.05
          and h.accuracy >= d.accuracy - 0.02 and desk_results["elapsed"] <= 1200)
    verdict(6, ok, f"central {c.accuracy:.4f} (30 dB: {at30:.4f}), distributed {d.accuracy:.4f} "
                   f"(gap {100 * gap:.2f} pp), hybrid {h.accuracy:.4f}, mc_runs={c.mc.n_runs}, "
                   f"{desk_results['elapsed']:.0f}s")


@pytest.mark.slow
def test_criterion_7_monotone_trend(desk_results):
    acc = desk_results["central"].acc_by_snr
    snrs = desk_results["central"].snr_db
    ok = list(snrs) == [10.0, 20.0, 30.0] and all(b >= a - 0.01 for a, b in zip(acc, acc[1:]))
    verdict(7, ok, "central accuracy by EGC SNR " + ", ".join(
        f"{s:.0f} dB: {100 * a:.2f}%" for s, a in zip(snrs, acc)))


# --- 8: reporting ---------------------------------------------------------------------


def test_criterion_8_reporting(desk_manifest, tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"preset": "desk", "dataset_dir": str(desk_manifest.root),
                               "output_dir": str(tmp_path / "out")}))
    code = cli.main(["eval", "--config", str(cfg), "--self-test"])
    capsys.readouterr()
    out = tmp_path / "out" / "eval"
    rows = list(csv.reader((out / "report.csv").read_text().splitlines()))
    ref = {}
    for kind, tag, x, y, _ in rows[1:]:
        if kind == "reference":
            ref.setdefault(tag, []).append((float(x), float(y)))
    summary = json.loads((out / "summary.json").read_text())
    import hashlib
    checksum_ok = (hashlib.sha256(reference_bytes()).hexdigest() == REFERENCE_SHA256
                   == summary["reference_sha256"])
    c0, d1 = ref["central_egc"][0], ref["distributed_3ru"][-1]
    endpoints = (math.isclose(c0[0], -14.77, abs_tol=0.01) and math.isclose(c0[1], 28.32, abs_tol=0.01)
                 and math.isclose(d1[0], 25.23, abs_tol=0.01) and math.isclose(d1[1], 96.20, abs_tol=0.01))
    png = (out / "accuracy_vs_mean_snr.png").read_bytes()[:4] == b"\x89PNG"
    ok = code == 0 and len(ref) == 4 and checksum_ok and endpoints and png
    verdict(8, ok, f"{len(ref)} reference curves, checksum ok={checksum_ok}, central start {c0}, "
                   f"distributed-3RU end {d1}, plot written={png}")
