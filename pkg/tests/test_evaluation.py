import csv
import hashlib
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfamc.dataset import SplitData
from cfamc.errors import InvalidArgument, PartialResultsError
from cfamc.evaluation import (
    REFERENCE_SHA256,
    REFERENCE_TAGS,
    MonteCarloStats,
    PipelineConfig,
    combine_reports,
    emit_report,
    evaluate,
    mean_ru_snr_db,
    monte_carlo_evaluate,
    reference_bytes,
    reference_curves,
    report_from_predictions,
    run_seed,
)
from cfamc.model import ModelSpec
from cfamc.training import Hyperparams


def balanced_split(per_cell=3, snrs=(0.0, 10.0, 20.0), n_ru=3):
    labels = np.repeat(np.arange(7), per_cell * len(snrs))
    snr = np.tile(np.repeat(snrs, per_cell), 7)
    n = len(labels)
    return SplitData(np.zeros((n, n_ru, 8), np.complex64), labels.astype(np.int64),
                     snr.astype(np.float32), np.ones((n, n_ru), np.float32), np.arange(n))


def oracle(split):
    return split.labels


class Runs:
    """Stand-in pipeline: run r returns an oracle or a fixed-error predictor."""

    def __init__(self, split, wrong=0, fail_at=None):
        self.split, self.wrong, self.fail_at = split, wrong, fail_at

    def run(self, r):
        if r == self.fail_at:
            raise RuntimeError("boom")
        wrong = self.wrong

        def predict(split):
            out = split.labels.copy()
            out[:wrong] = (out[:wrong] + 1) % 7
            return out
        return predict, self.split


def test_constant_model_scores_one_seventh():
    split = balanced_split()
    rep = evaluate(lambda s: np.zeros(len(s), dtype=int), split)
    assert rep.accuracy == pytest.approx(1 / 7)
    assert np.count_nonzero(rep.confusion.sum(0)) == 1 and rep.confusion[:, 0].sum() == len(split)


def test_oracle_is_perfect():
    rep = evaluate(oracle, balanced_split())
    assert rep.accuracy == 1.0
    assert np.array_equal(rep.confusion, np.diag(np.diag(rep.confusion)))
    assert np.all(rep.acc_by_snr == 1.0)


def test_scores_are_reduced_by_argmax():
    split = balanced_split()
    scores = np.eye(7)[split.labels] * 0.9 + 0.01
    assert evaluate(lambda s: scores, split).accuracy == 1.0
    with pytest.raises(InvalidArgument):
        evaluate(lambda s: np.zeros((len(s), 5)), split)


@given(st.lists(st.integers(0, 6), min_size=63, max_size=63))
@settings(max_examples=50, deadline=None)
def test_per_snr_accuracy_recomposes_overall(preds):
    split = balanced_split()
    pred = np.array(preds)
    rep = report_from_predictions(pred, split)
    brute = sum(int(p == y) for p, y in zip(pred, split.labels)) / len(pred)
    assert rep.accuracy == pytest.approx(brute, abs=1e-12)
    assert float(np.sum(rep.acc_by_snr * rep.count_by_snr) / rep.count_by_snr.sum()) == pytest.approx(brute)
    assert rep.confusion.sum() == rep.n_records == len(pred)
    for s, a in zip(rep.snr_db, rep.acc_by_snr):
        m = split.egc_snr_db == s
        assert a == pytest.approx(np.mean(pred[m] == split.labels[m]))


def test_report_rejects_bad_predictions():
    split = balanced_split()
    with pytest.raises(InvalidArgument):
        report_from_predictions(np.zeros(3, int), split)
    with pytest.raises(InvalidArgument):
        report_from_predictions(np.full(len(split), 9), split)


def test_mean_ru_snr_axis():
    assert mean_ru_snr_db(10.0, 3) == pytest.approx(10 - 10 * math.log10(3))
    rep = evaluate(oracle, balanced_split())
    assert np.allclose(rep.mean_ru_snr_db, rep.snr_db - 4.771212547)


def test_monte_carlo_single_run():
    split = balanced_split()
    rep = monte_carlo_evaluate(Runs(split, wrong=7), 1)
    assert rep.mc.n_runs == 1 and rep.mc.mean == rep.accuracy == pytest.approx(1 - 7 / 63)
    assert rep.mc.std == 0.0


def test_monte_carlo_oracle_runs():
    rep = monte_carlo_evaluate(Runs(balanced_split()), 4)
    assert rep.mc.per_run == [1.0] * 4 and rep.mc.std == 0.0
    assert rep.n_records == 4 * 63


def test_monte_carlo_partial_failure():
    with pytest.raises(PartialResultsError) as err:
        monte_carlo_evaluate(Runs(balanced_split(), fail_at=2), 4)
    assert len(err.value.completed) == 2


def test_monte_carlo_stats():
    s = MonteCarloStats.from_runs([0.5, 0.7])
    assert s.mean == pytest.approx(0.6) and s.std == pytest.approx(np.std([0.5, 0.7], ddof=1))


def test_combined_curves_are_count_weighted():
    split = balanced_split()
    a = report_from_predictions(split.labels, split)
    b = report_from_predictions(np.zeros(len(split), int), split)
    both = combine_reports([a, b])
    assert both.accuracy == pytest.approx((1 + 1 / 7) / 2)
    assert np.allclose(both.acc_by_snr, (a.acc_by_snr + b.acc_by_snr) / 2)


def test_run_seeds_are_distinct():
    assert len({run_seed(0, r) for r in range(16)}) == 16


def test_pipeline_config_validation():
    with pytest.raises(InvalidArgument):
        PipelineConfig("federated", ModelSpec(), None)
    with pytest.raises(InvalidArgument):
        PipelineConfig("hybrid", ModelSpec(), None)


def test_real_pipeline_through_monte_carlo(tiny_manifest):
    pc = PipelineConfig("central", ModelSpec("central", 64, 4), tiny_manifest,
                        Hyperparams(epochs=2, batch_size=16), 3)
    rep = monte_carlo_evaluate(pc, 2)
    assert rep.mc.n_runs == 2 and len(set(rep.mc.digests)) == 2
    assert rep.n_records == 2 * tiny_manifest.record_counts["test"]


# --- reference curves -----------------------------------------------------


def test_reference_checksum_and_shape():
    assert hashlib.sha256(reference_bytes()).hexdigest() == REFERENCE_SHA256
    curves = reference_curves()
    assert tuple(c.tag for c in curves) == REFERENCE_TAGS
    for c in curves:
        assert len(c.points) == 21
        assert np.all(np.diff(c.snr_db) > 0)


def test_reference_endpoints():
    curves = {c.tag: c for c in reference_curves()}
    x0, y0 = curves["central_egc"].points[0]
    assert x0 == pytest.approx(-14.77, abs=0.01) and y0 == pytest.approx(28.32, abs=0.01)
    x1, y1 = curves["distributed_3ru"].points[-1]
    assert x1 == pytest.approx(25.23, abs=0.01) and y1 == pytest.approx(96.20, abs=0.01)


# --- report files ---------------------------------------------------------------


def test_emitted_files(tmp_path):
    rep = evaluate(oracle, balanced_split(), label="oracle")
    paths = emit_report(rep, reference_curves(), tmp_path)
    with open(paths["csv"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["kind", "tag", "x", "y", "value"]
    assert len(rows) == 1 + 2 * 3 + 4 * 21 + 49
    kinds = {r[0] for r in rows[1:]}
    assert kinds == {"egc_curve", "mean_snr_curve", "reference", "confusion"}
    summary = json.loads(paths["summary"].read_text())
    assert summary["reference_tags"] == list(REFERENCE_TAGS)
    assert summary["reports"][0]["accuracy"] == 1.0
    assert paths["plot"].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_reemission_is_byte_identical(tmp_path):
    rep = evaluate(oracle, balanced_split())
    a = emit_report(rep, reference_curves(), tmp_path / "a")
    b = emit_report(rep, reference_curves(), tmp_path / "b")
    for k in a:
        assert a[k].read_bytes() == b[k].read_bytes()


def test_empty_reference_set(tmp_path):
    rep = evaluate(oracle, balanced_split())
    with_ref = emit_report(rep, reference_curves(), tmp_path / "a")
    without = emit_report(rep, (), tmp_path / "b")
    with open(without["csv"]) as fh:
        rows = list(csv.reader(fh))
    assert not any(r[0] == "reference" for r in rows)
    assert len(rows) == 1 + 6 + 49
    assert json.loads(without["summary"].read_text())["reference_sha256"] is None
    assert with_ref["plot"].read_bytes() != without["plot"].read_bytes()
