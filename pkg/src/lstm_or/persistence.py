"""Model checkpoints, ensemble bundles and prediction tables on disk."""

import json
import math
import os

import numpy as np

from . import lstm
from .container import read_container, write_container
from .data import NormStats
from .ensemble import LSTMOrdinalEnsemble, PredictionRecords, UncertaintyNormalizer, esd
from .training import LSTMOrdinalRegressor

BUNDLE_FILE = "ensemble.json"


def _array_names(n_layers):
    names = []
    for i in range(n_layers):
        names += [f"layer{i}.weight", f"layer{i}.bias"]
    return names + ["head.weight", "head.bias"]


def save_model(model, path, norm_stats=None, normalizer=None, extra=None):
    """Write a fitted model; arrays follow the declared parameter order."""
    arrays = lstm.param_arrays(model.stack_, model.head_)
    names = _array_names(model.stack_.n_layers)
    meta = {
        "kind": "checkpoint",
        "params": model.get_params(),
        "n_features": int(model.n_features_in_),
        "best_loss": float(model.best_loss_),
        "best_iteration": model.best_iteration_,
        "n_iter": int(model.n_iter_),
        "diverged": bool(model.diverged_),
        "n_excluded": int(model.n_excluded_),
        "history": [[int(i), float(a), float(b)] for i, a, b in model.history_],
        "norm_stats": None if norm_stats is None else norm_stats.to_meta(),
        "normalizer": None if normalizer is None else normalizer.to_meta(),
        "array_order": names,
        "extra": extra or {},
    }
    write_container(path, meta, dict(zip(names, arrays)))


def load_model(path):
    """Return ``(model, meta)``; the model is ready to predict."""
    meta, arrays = read_container(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError(f"{path} is not a model checkpoint")
    params = meta["params"]
    model = LSTMOrdinalRegressor(**params)
    model.stack_, model.head_ = lstm.from_arrays([arrays[n] for n in meta["array_order"]], params["head"])
    model.n_features_in_ = meta["n_features"]
    model.best_loss_ = meta["best_loss"]
    model.best_iteration_ = meta["best_iteration"]
    model.n_iter_ = meta["n_iter"]
    model.diverged_ = meta["diverged"]
    model.n_excluded_ = meta["n_excluded"]
    model.history_ = [tuple(h) for h in meta["history"]]
    return model, meta


def save_ensemble(ensemble, out_dir, norm_stats=None, extra=None):
    """Write one checkpoint per member plus ``ensemble.json`` referencing them."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for i, member in enumerate(ensemble.members_):
        name = f"member_{i}.ckpt"
        save_model(member, os.path.join(out_dir, name), norm_stats, extra=extra)
        files.append(name)
    scheme = ensemble.scheme_
    bundle = {
        "kind": "ensemble-bundle",
        "members": files,
        "normalizer": None if ensemble.normalizer_ is None else ensemble.normalizer_.to_meta(),
        "scheme": {"rul_max": scheme.rul_max, "n_intervals": scheme.n_intervals},
        "pool_losses": [float(v) for v in ensemble.pool_losses_],
        "selected": [int(i) for i in ensemble.selected_],
        "norm_stats": None if norm_stats is None else norm_stats.to_meta(),
        "extra": extra or {},
    }
    path = os.path.join(out_dir, BUNDLE_FILE)
    with open(path, "w") as fh:
        json.dump(bundle, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [path] + [os.path.join(out_dir, f) for f in files]


def load_ensemble(path):
    """Return ``(ensemble, norm_stats, extra)`` from a bundle file."""
    with open(path) as fh:
        bundle = json.load(fh)
    if bundle.get("kind") != "ensemble-bundle":
        raise ValueError(f"{path} is not an ensemble bundle")
    root = os.path.dirname(os.path.abspath(path))
    members = [load_model(os.path.join(root, f))[0] for f in bundle["members"]]
    normalizer = None if bundle["normalizer"] is None else UncertaintyNormalizer.from_meta(bundle["normalizer"])
    ens = LSTMOrdinalEnsemble.from_members(members, normalizer)
    ens.pool_losses_ = np.array(bundle["pool_losses"], dtype=np.float64)
    stats = None if bundle["norm_stats"] is None else NormStats.from_meta(bundle["norm_stats"])
    return ens, stats, bundle.get("extra", {})


def load_predictor(path):
    """Load a bundle or a single checkpoint as ``(predictor, norm_stats, extra)``.

    An ordinal checkpoint becomes a one-member ensemble. A metric checkpoint
    is returned as the bare model.
    """
    if path.endswith(".json") or os.path.isdir(path):
        if os.path.isdir(path):
            path = os.path.join(path, BUNDLE_FILE)
        return load_ensemble(path)
    model, meta = load_model(path)
    stats = None if meta["norm_stats"] is None else NormStats.from_meta(meta["norm_stats"])
    if model.head == lstm.METRIC:
        return model, stats, meta["extra"]
    normalizer = None if meta["normalizer"] is None else UncertaintyNormalizer.from_meta(meta["normalizer"])
    return LSTMOrdinalEnsemble.from_members([model], normalizer), stats, meta["extra"]


def predict_records(predictor, X):
    """Prediction records from an ensemble or a metric-head model."""
    if isinstance(predictor, LSTMOrdinalEnsemble):
        return predictor.predict_records(X)
    est = predictor.predict(X)
    zero = np.zeros_like(est)
    nan = np.full_like(est, np.nan)
    return PredictionRecords(est[:, None], est, None, esd(est[:, None]), nan, zero, nan)


# -- prediction tables ----------------------------------------------------------

def prediction_columns(m):
    return (["unit_id", "true_rul", "rul_hat"] + [f"rul_hat_{i + 1}" for i in range(m)]
            + ["u_esd_raw", "u_esd", "u_ent_raw", "u_ent"])


def _fmt(v):
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.10g}"


def write_prediction_table(path, unit_ids, true_rul, records):
    m = records.member_estimates.shape[1]
    with open(path, "w") as fh:
        fh.write("\t".join(prediction_columns(m)) + "\n")
        for i in range(len(records)):
            row = [str(int(unit_ids[i])), _fmt(float(true_rul[i])), _fmt(float(records.estimate[i]))]
            row += [_fmt(float(v)) for v in records.member_estimates[i]]
            row += [_fmt(float(records.u_esd_raw[i])), _fmt(float(records.u_esd[i])),
                    _fmt(float(records.u_ent_raw[i])), _fmt(float(records.u_ent[i]))]
            fh.write("\t".join(row) + "\n")


def read_prediction_table(path):
    """Return a dict of column arrays plus ``member_estimates`` of shape ``(N, m)``."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    required = {"unit_id", "true_rul", "rul_hat", "u_esd_raw", "u_esd", "u_ent_raw", "u_ent"}
    missing = required - set(header)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    for lineno, row in enumerate(rows, 2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
    data = np.array([[float(v) for v in row] for row in rows]) if rows else np.zeros((0, len(header)))
    cols = {name: data[:, i] for i, name in enumerate(header)}
    cols["unit_id"] = cols["unit_id"].astype(np.int64)
    member_cols = [n for n in header if n.startswith("rul_hat_")]
    cols["member_estimates"] = np.column_stack([cols[n] for n in member_cols]) if member_cols else None
    return cols
