import numpy as np
import pytest

from lstm_or import data as D
from lstm_or import persistence as P
from lstm_or.ensemble import LSTMOrdinalEnsemble, UncertaintyNormalizer
from lstm_or.training import LSTMOrdinalRegressor


@pytest.fixture(scope="module")
def prepared():
    return D.prepare(D.generate_synthetic(n_units=8, seed=4), 50, seed=4, n_windows=4, max_len=20)


def _fit(prepared, **kw):
    tr = prepared.train if kw.get("head") != "metric" else prepared.train.failed_only()
    params = dict(hidden_size=3, n_layers=2, max_iter=5, max_len=20, random_state=1)
    params.update(kw)
    return LSTMOrdinalRegressor(**params).fit(tr.inputs, tr.values, tr.censored)


def test_checkpoint_round_trip_is_exact(prepared, tmp_path):
    model = _fit(prepared)
    path = str(tmp_path / "m.ckpt")
    norm = UncertaintyNormalizer(0.0, 1.0, 0.2, 0.8)
    P.save_model(model, path, prepared.norm_stats, norm, extra={"mode": "orc"})
    loaded, meta = P.load_model(path)
    assert loaded.get_params() == model.get_params()
    np.testing.assert_array_equal(loaded.predict_proba(prepared.test.inputs), model.predict_proba(prepared.test.inputs))
    assert meta["array_order"] == ["layer0.weight", "layer0.bias", "layer1.weight", "layer1.bias", "head.weight",
                                   "head.bias"]
    assert meta["extra"] == {"mode": "orc"}
    np.testing.assert_array_equal(np.array(loaded.history_), np.array(model.history_))
    P.save_model(loaded, str(tmp_path / "again.ckpt"), prepared.norm_stats, norm, extra={"mode": "orc"})
    assert open(path, "rb").read() == open(tmp_path / "again.ckpt", "rb").read()
    predictor, stats, extra = P.load_predictor(path)
    assert isinstance(predictor, LSTMOrdinalEnsemble) and predictor.normalizer_ == norm
    np.testing.assert_array_equal(stats.mean, prepared.norm_stats.mean)


def test_metric_checkpoint_predicts_with_zero_esd(prepared, tmp_path):
    model = _fit(prepared, head="metric")
    path = str(tmp_path / "mr.ckpt")
    P.save_model(model, path)
    predictor, stats, _ = P.load_predictor(path)
    assert stats is None
    rec = P.predict_records(predictor, prepared.test.inputs)
    assert rec.member_estimates.shape == (len(prepared.test), 1)
    assert np.all(rec.u_esd == 0) and np.all(np.isnan(rec.u_ent))


def test_ensemble_bundle_round_trip(prepared, tmp_path):
    members = [_fit(prepared, random_state=s) for s in (1, 2)]
    ens = LSTMOrdinalEnsemble.from_members(members, UncertaintyNormalizer(0.0, 3.0, 0.0, 1.0))
    paths = P.save_ensemble(ens, str(tmp_path / "bundle"), prepared.norm_stats, extra={"profile": "synthetic"})
    assert len(paths) == 3
    loaded, stats, extra = P.load_predictor(str(tmp_path / "bundle"))
    assert extra == {"profile": "synthetic"}
    a = ens.predict_records(prepared.test.inputs)
    b = loaded.predict_records(prepared.test.inputs)
    np.testing.assert_array_equal(a.member_estimates, b.member_estimates)
    np.testing.assert_array_equal(a.u_esd, b.u_esd)


def test_prediction_table_round_trip(prepared, tmp_path):
    ens = LSTMOrdinalEnsemble.from_members([_fit(prepared, random_state=s) for s in (1, 2, 3)])
    rec = ens.predict_records(prepared.test.inputs)
    path = str(tmp_path / "pred.tsv")
    P.write_prediction_table(path, prepared.test.unit_ids, prepared.test.values, rec)
    header = open(path).readline().rstrip("\n").split("\t")
    assert header == ["unit_id", "true_rul", "rul_hat", "rul_hat_1", "rul_hat_2", "rul_hat_3", "u_esd_raw",
                      "u_esd", "u_ent_raw", "u_ent"]
    table = P.read_prediction_table(path)
    np.testing.assert_allclose(table["rul_hat"], rec.estimate, rtol=1e-9)
    np.testing.assert_allclose(table["member_estimates"], rec.member_estimates, rtol=1e-9)
    assert np.all(np.isnan(table["u_esd"]))
    np.testing.assert_array_equal(table["unit_id"], prepared.test.unit_ids)


def test_prediction_table_errors(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("unit_id\trul_hat\n1\t2\n")
    with pytest.raises(ValueError, match="missing columns"):
        P.read_prediction_table(str(path))
    cols = "\t".join(P.prediction_columns(1))
    path.write_text(cols + "\n1\t2\n")
    with pytest.raises(ValueError, match=":2:"):
        P.read_prediction_table(str(path))


def test_loaders_reject_wrong_kind(tmp_path, prepared):
    cache = str(tmp_path / "c")
    D.save_prepared(prepared, cache)
    with pytest.raises(ValueError):
        P.load_model(cache)
    bad = tmp_path / "x.json"
    bad.write_text('{"kind": "other"}')
    with pytest.raises(ValueError):
        P.load_ensemble(str(bad))
