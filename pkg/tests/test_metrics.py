import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.decomposition import PCA

import oracles
from lstm_or import metrics as M


def _same(a, b, tol=1e-12):
    if isinstance(b, float) and math.isnan(b):
        return isinstance(a, float) and math.isnan(a)
    return abs(a - b) <= tol


def test_perfect_predictions():
    assert M.rmse(np.zeros(5)) == 0.0
    assert M.timeliness_score(np.zeros(5)) == 0.0
    with pytest.raises(ValueError):
        M.rmse(np.zeros(0))


def test_timeliness_is_asymmetric():
    early = M.timeliness_score([-10.0])
    late = M.timeliness_score([10.0])
    assert early == pytest.approx(math.exp(10 / 13) - 1)
    assert late == pytest.approx(math.e - 1)
    assert late > early


def test_worked_examples():
    assert M.rmse([3.0, -4.0]) == pytest.approx(math.sqrt(12.5), abs=1e-15)
    assert M.timeliness_score([10.0]) == pytest.approx(M.timeliness_score([-13.0]), abs=1e-15)
    assert M.timeliness_score([13.0]) == pytest.approx(math.exp(1.3) - 1)
    assert M.coverage_ce([5.0, 8.0, 50.0], [0.1, 0.9, 0.1], 10, 0.2) == 0.5
    assert M.precision_low_rul([5.0], [2.0], [0.1], 20, 0.2, 10) == 1.0


def test_hand_example_prf():
    p, r, f1 = M.uncertainty_prf(np.array([5.0, 20, 3, 8]), np.array([0.2, 0.4, 0.6, 0.1]), 0.5, 10.0)
    assert (p, r) == (2 / 3, 0.5)
    assert f1 == pytest.approx(4 / 7, abs=1e-15)


@given(n=st.integers(1, 20), seed=st.integers(0, 1000))
def test_recall_identity_and_ranges(n, seed):
    rng = np.random.default_rng(seed)
    abs_err = rng.uniform(0, 30, n)
    unc = rng.random(n)
    p, r, f1 = M.uncertainty_prf(abs_err, unc, 0.5, 10)
    certain = np.sum(unc <= 0.5)
    if certain:
        assert r == pytest.approx(p * certain / n, abs=1e-15)
        assert 0 <= p <= 1 and 0 <= f1 <= 1
    e = rng.normal(0, 20, n)
    assert M.timeliness_score(e) == pytest.approx(M.timeliness_score(e[: n // 2]) + M.timeliness_score(e[n // 2:]))
    assert M.rmse(e) == M.rmse(-e)


def test_empty_denominators_are_nan():
    p, r, f1 = M.uncertainty_prf([1.0], [0.9], 0.2, 10.0)
    assert math.isnan(p) and r == 0.0 and math.isnan(f1)
    assert math.isnan(M.precision_low_rul([100.0], [1.0], [0.0], 20, 0.2, 10))
    assert math.isnan(M.coverage_ce([50.0], [0.0], 10, 0.2))


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 30), seed=st.integers(0, 10_000))
def test_metrics_match_oracles(n, seed):
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, 200, n).astype(float)
    est = rng.uniform(0, 130, n)
    unc = rng.choice([0.0, 0.1, 0.2, 0.5, 1.0], n)
    errors = est - truth
    abs_err = np.abs(errors)
    assert _same(M.rmse(errors), oracles.rmse(truth, est))
    assert M.timeliness_score(errors) == pytest.approx(oracles.timeliness(truth, est), rel=1e-12)
    p, r, f1 = M.uncertainty_prf(abs_err, unc, 0.2, 10)
    op, or_, of1, _, _ = oracles.prf(abs_err, unc, 0.2, 10)
    assert _same(p, op) and _same(r, or_) and _same(f1, of1)
    assert _same(M.precision_low_rul(truth, abs_err, unc, 50, 0.2, 10),
                 oracles.precision_low(truth, abs_err, unc, 50, 0.2, 10)[0])
    assert _same(M.coverage_ce(abs_err, unc, 10, 0.2), oracles.coverage(abs_err, unc, 10, 0.2)[0])


def test_curves_cover_default_sweeps_and_drop_undefined():
    th = M.EvalThresholds()
    assert th.tau_u_sweep[0] == 0.1 and th.tau_u_sweep[-1] == 1.5 and len(th.tau_u_sweep) == 15
    assert th.tau_r_sweep == tuple(float(v) for v in range(10, 131, 10))
    truth = np.array([5.0, 50.0, 100.0])
    abs_err = np.array([2.0, 30.0, 4.0])
    unc = np.array([0.05, 0.3, 1.2])
    tables = M.threshold_curves(truth, abs_err, {"esd": unc}, th)
    avg = tables["avg_error_vs_tau_u.esd"]
    assert avg.values[0] == 2.0 and avg.counts[0] == 1
    assert avg.values[-1] == pytest.approx(12.0)
    pl = tables["pl_vs_tau_r.esd"].defined()
    assert pl.thresholds.tolist() == [float(v) for v in range(10, 131, 10)]
    ce = tables["ce_vs_tau_e.esd"]
    assert ce.values[0] == 0.5
    tsv = tables["precision_vs_tau_u.esd"].to_tsv()
    assert tsv.splitlines()[0] == "threshold\tvalue\tcount"


def test_defined_drops_nan_rows():
    t = M.CurveTable("x", np.array([1.0, 2.0]), np.array([np.nan, 0.5]), np.array([0, 3]))
    assert t.defined().thresholds.tolist() == [2.0]
    assert t.to_tsv().count("\n") == 2


def test_evaluate_clips_truth_and_writes(tmp_path):
    truth = np.array([200.0, 10.0, 50.0])
    est = np.array([130.0, 12.0, 40.0])
    rep = M.evaluate(truth, est, {"esd": np.array([0.0, 0.1, 0.9]), "entropy": None})
    assert rep.n_clipped == 1
    assert rep.rmse == pytest.approx(math.sqrt((0 + 4 + 100) / 3))
    assert rep.point_metrics["precision.esd"] == 1.0
    assert "entropy" not in " ".join(rep.tables)
    paths = rep.write(str(tmp_path))
    assert (tmp_path / "summary.tsv").read_text().startswith("instances\t3\n")
    assert len(paths) == 1 + len(rep.tables)
    with pytest.raises(ValueError):
        M.evaluate(np.zeros(2), np.zeros(3))


def test_nearest_worked_example():
    train = np.array([[0.0, 1.0], [1.0, 1.0], [0.0, 0.5]])
    assert M.nearest_train_instances(np.zeros(2), train, np.array([1, 2, 3]), k=3) == [3, 1, 2]
    assert M.nearest_train_instances(np.zeros(2), train, np.array([1, 2, 3]), k=1) == [3]


def test_nearest_train_instances():
    train = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [0.1, 0.0], [3.0, 0.0]])
    ids = np.array([1, 2, 3, 1, 4])
    assert M.nearest_train_instances(np.zeros(2), train, ids, k=3) == [1, 2, 4]
    assert M.nearest_train_instances(np.zeros(2), train, ids, k=10) == [1, 2, 4, 3]
    tie = M.nearest_train_instances(np.zeros(1), np.array([[1.0], [-1.0]]), np.array([9, 7]), k=1)
    assert tie == [7]
    with pytest.raises(ValueError):
        M.nearest_train_instances(np.zeros(3), train, ids)


@settings(max_examples=30, deadline=None)
@given(t=st.integers(3, 40), p=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_pca_matches_sklearn_up_to_sign(t, p, seed):
    x = np.random.default_rng(seed).normal(size=(t, p)) * np.arange(1, p + 1)
    ours = M.pca_first_component(x)
    ref = PCA(n_components=1).fit_transform(x)[:, 0]
    assert np.allclose(ours, ref, atol=1e-9) or np.allclose(ours, -ref, atol=1e-9)
    assert ours[-1] >= ours[0]


def test_pca_variance_and_translation():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(50, 4)) @ rng.normal(size=(4, 4))
    pc = M.pca_first_component(x)
    top = np.linalg.eigvalsh(np.cov(x, rowvar=False))[-1]
    assert np.var(pc, ddof=1) == pytest.approx(top, rel=1e-10)
    np.testing.assert_allclose(M.pca_first_component(x + 7.5), pc, atol=1e-10)
    axis = np.column_stack([np.arange(6.0), np.zeros(6)])
    np.testing.assert_allclose(M.pca_first_component(axis), np.arange(6.0) - 2.5, atol=1e-12)


def test_pca_degenerate_inputs():
    np.testing.assert_array_equal(M.pca_first_component(np.ones((4, 3))), np.zeros(4))
    with pytest.raises(ValueError):
        M.pca_first_component(np.ones((1, 3)))


def test_thresholds_must_be_positive():
    with pytest.raises(ValueError):
        M.EvalThresholds(tau_e=0)
