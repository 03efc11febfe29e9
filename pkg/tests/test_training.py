import math

import numpy as np
import pytest
from sklearn.base import clone

from lstm_or import data as D
from lstm_or import lstm as L
from lstm_or import training as T
from lstm_or.training import LSTMOrdinalRegressor

SMALL = dict(hidden_size=4, n_layers=1, max_iter=15, batch_size=8, learning_rate=0.01, max_len=30)


@pytest.fixture(scope="module")
def prepared():
    bundle = D.generate_synthetic(n_units=12, seed=5)
    return D.prepare(bundle, 50, seed=5, n_windows=6, max_len=30)


def test_adam_matches_hand_computation():
    p = [np.array([1.0, -2.0])]
    state = T.adam_init(p)
    grads = [np.array([0.5, -1.0]), np.array([0.1, 0.2])]
    m = np.zeros(2)
    v = np.zeros(2)
    ref = p[0].copy()
    for t, g in enumerate(grads, 1):
        p, state = T.adam_step(p, [g], state, 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p[0], ref, rtol=0, atol=1e-15)
    assert state.t == 2


def test_adam_first_step_moves_by_learning_rate():
    p, _ = T.adam_step([np.array([3.0])], [np.array([42.0])], T.adam_init([np.zeros(1)]), 0.001)
    assert p[0][0] == pytest.approx(3.0 - 0.001, abs=1e-10)


def test_adam_is_functional_and_rejects_bad_gradients():
    params = [np.ones(3)]
    state = T.adam_init(params)
    new, _ = T.adam_step(params, [np.ones(3)], state, 0.1)
    assert new[0] is not params[0] and np.all(params[0] == 1)
    with pytest.raises(ValueError):
        T.adam_step(params, [np.array([np.nan, 0, 0])], state, 0.1)
    with pytest.raises(ValueError):
        T.adam_step(params, [np.ones(2)], state, 0.1)


def test_clip_by_global_norm():
    grads = [np.array([3.0]), np.array([4.0])]
    clipped, norm = T.clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    assert math.sqrt(sum(float(g @ g) for g in clipped)) == pytest.approx(1.0)
    same, _ = T.clip_by_global_norm(grads, 10.0)
    assert same is grads


def test_early_stopping_counts_evaluations():
    stop = T.EarlyStopping(patience=2)
    assert stop(1.0, 0) and not stop.should_stop
    assert not stop(1.0, 1)
    assert stop(0.5, 2) and stop.counter == 0
    stop(0.6, 3)
    stop(0.7, 4)
    assert stop.should_stop and stop.best_iteration == 2 and stop.best_loss == 0.5


def test_estimator_params_and_clone():
    est = LSTMOrdinalRegressor(hidden_size=7, random_state=3)
    params = est.get_params()
    assert params["hidden_size"] == 7 and params["head"] == "ordinal"
    assert clone(est).get_params() == params
    assert est.set_params(n_layers=3).n_layers == 3


def test_fit_predict_shapes_and_determinism(prepared):
    tr, va = prepared.train, prepared.validation
    kw = dict(X_val=va.inputs, y_val=va.values, censored_val=va.censored)
    a = LSTMOrdinalRegressor(random_state=1, **SMALL).fit(tr.inputs, tr.values, tr.censored, **kw)
    b = LSTMOrdinalRegressor(random_state=1, **SMALL).fit(tr.inputs, tr.values, tr.censored, **kw)
    pa, pb = a.predict(prepared.test.inputs), b.predict(prepared.test.inputs)
    np.testing.assert_array_equal(pa, pb)
    assert pa.shape == (len(prepared.test),) and np.all((pa >= 0) & (pa <= 130))
    proba = a.predict_proba(prepared.test.inputs)
    assert proba.shape == (len(prepared.test), 10)
    assert a.n_features_in_ == prepared.n_features
    assert a.history_[0][0] == 0 and math.isfinite(a.best_loss_)
    assert a.best_loss_ == min(h[2] for h in a.history_)
    c = LSTMOrdinalRegressor(random_state=2, **SMALL).fit(tr.inputs, tr.values, tr.censored, **kw)
    assert not np.array_equal(c.predict(prepared.test.inputs), pa)


def test_best_snapshot_reproduces_best_validation_loss(prepared):
    tr, va = prepared.train, prepared.validation
    est = LSTMOrdinalRegressor(random_state=0, **SMALL).fit(tr.inputs, tr.values, tr.censored, va.inputs,
                                                            va.values, va.censored)
    assert est.loss(va.inputs, va.values, va.censored) == pytest.approx(est.best_loss_, rel=1e-12)


def test_zero_information_windows_are_excluded():
    rng = np.random.default_rng(0)
    X = [rng.normal(size=(5, 2)) for _ in range(6)]
    y = np.array([20.0, 40.0, 5.0, 1.0, 60.0, 3.0])
    cens = np.array([False, False, True, True, False, True])
    est = LSTMOrdinalRegressor(hidden_size=2, n_layers=1, max_iter=2, random_state=0).fit(X, y, cens)
    assert est.n_excluded_ == 3
    with pytest.raises(ValueError, match="usable"):
        LSTMOrdinalRegressor(max_iter=1).fit(X[2:4], y[2:4], cens[2:4])


def test_metric_head_rejects_censored_targets():
    X = [np.ones((3, 2))] * 2
    with pytest.raises(ValueError, match="metric head"):
        LSTMOrdinalRegressor(head="metric", max_iter=1).fit(X, [10.0, 20.0], [False, True])


def test_metric_head_predicts_cycles():
    rng = np.random.default_rng(1)
    X = [rng.normal(size=(4, 2)) for _ in range(8)]
    est = LSTMOrdinalRegressor(head="metric", hidden_size=3, n_layers=1, max_iter=5, random_state=0)
    est.fit(X, rng.uniform(0, 200, 8))
    pred = est.predict(X)
    assert np.all((pred > 0) & (pred < 130))
    with pytest.raises(AttributeError):
        est.predict_proba(X)


@pytest.mark.parametrize("kwargs", [dict(head="x"), dict(hidden_size=0), dict(dropout=1.0), dict(learning_rate=-1)])
def test_invalid_hyperparameters(kwargs):
    with pytest.raises(ValueError):
        LSTMOrdinalRegressor(**kwargs).fit([np.ones((3, 2))], [5.0])


def test_input_validation():
    est = LSTMOrdinalRegressor(hidden_size=2, n_layers=1, max_iter=1, random_state=0)
    with pytest.raises(ValueError):
        est.fit([np.ones((3, 2)), np.ones((3, 3))], [1.0, 2.0])
    with pytest.raises(ValueError):
        est.fit([np.ones((3, 2))], [1.0, 2.0])
    with pytest.raises(ValueError):
        est.fit([np.ones((3, 2))], [-1.0])
    est.fit([np.ones((3, 2))], [20.0])
    with pytest.raises(ValueError, match="features"):
        est.predict([np.ones((3, 5))])


def test_divergence_keeps_last_finite_snapshot(monkeypatch):
    rng = np.random.default_rng(0)
    X = [rng.normal(size=(4, 2)) for _ in range(4)]
    y = [10.0, 30.0, 50.0, 70.0]
    real = L.loss_and_grad
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        loss, sg, hg = real(*args, **kwargs)
        return (math.nan if calls["n"] >= 3 else loss), sg, hg

    monkeypatch.setattr(L, "loss_and_grad", flaky)
    est = LSTMOrdinalRegressor(hidden_size=2, n_layers=1, batch_size=4, max_iter=10, random_state=0)
    with pytest.warns(RuntimeWarning, match="diverged"):
        est.fit(X, y)
    assert est.diverged_ and est.n_iter_ == 3
    assert math.isfinite(est.best_loss_)
    assert np.all(np.isfinite(est.predict(X)))


def test_train_modes_select_windows(prepared):
    orc = T.train(SMALL, "orc", prepared.train, prepared.validation)
    orm = T.train(SMALL, "or", prepared.train, prepared.validation)
    mr = T.train(SMALL, "mr", prepared.train, prepared.validation)
    assert orc.head == orm.head == "ordinal" and mr.head == "metric"
    with pytest.raises(ValueError):
        T.train(SMALL, "xyz", prepared.train)


def test_or_equals_orc_without_censoring():
    prep = D.prepare(D.generate_synthetic(n_units=8, seed=1), 0, seed=1, n_windows=4, max_len=20)
    params = dict(SMALL, random_state=4)
    a = T.train(params, "or", prep.train, prep.validation)
    b = T.train(params, "orc", prep.train, prep.validation)
    np.testing.assert_array_equal(a.predict(prep.test.inputs), b.predict(prep.test.inputs))


def test_grid_search_cardinality_and_tie_break(prepared, monkeypatch):
    assert len(list(T.ParameterGrid(T.DEFAULT_GRID))) == 24
    grid = {"hidden_size": [3, 2], "n_layers": [1], "learning_rate": [0.01, 0.001]}

    class Stub:
        def __init__(self, params):
            self.params = params
            self.best_loss_ = 1.0
            self.diverged_ = False

    monkeypatch.setattr(T, "train", lambda params, *a, **k: Stub(params))
    best, model, results = T.grid_search(grid, "orc", prepared.train, prepared.validation, {"max_iter": 1})
    assert len(results) == 4
    assert best == {"max_iter": 1, "hidden_size": 2, "n_layers": 1, "learning_rate": 0.001}
    assert model.params == best


def test_grid_search_picks_lowest_loss(prepared):
    grid = {"hidden_size": [2, 3], "n_layers": [1], "learning_rate": [0.01]}
    best, model, results = T.grid_search(grid, "orc", prepared.train, prepared.validation, dict(SMALL))
    losses = [r["val_loss"] for r in results]
    assert model.best_loss_ == min(losses)
    assert best["hidden_size"] == results[int(np.argmin(losses))]["hidden_size"]


def test_member_seeds_are_distinct():
    seeds = {T.member_seed(0, i) for i in range(10)}
    assert len(seeds) == 10
    assert T.member_seed(0, 1) == T.member_seed(0, 1) != T.member_seed(1, 1)
