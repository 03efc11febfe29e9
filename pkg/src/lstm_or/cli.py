"""Command-line entry point: ``lstm-or COMMAND --config PATH --out DIR``.

Exit status is 0 on success, 2 for bad input (config, files, formats) and
3 for numerical failure (divergence). Errors are printed to stderr as a
single line starting with ``error:``.
"""

import argparse
import hashlib
import math
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import data, lstm
from .config import ConfigError, load_config
from .container import ContainerError
from .ensemble import LSTMOrdinalEnsemble
from .metrics import EvalThresholds, evaluate, nearest_train_instances, pca_first_component
from .persistence import (load_predictor, predict_records, read_prediction_table, save_ensemble, save_model,
                          write_prediction_table)
from .training import MODES, LSTMOrdinalRegressor, TrainingDivergedError, grid_search, member_seed, train

COMMANDS = ("prepare", "train", "ensemble", "predict", "evaluate", "synth")
RESOLVED_CONFIG = "config.resolved.txt"
MANIFEST = "manifest.tsv"


class InputError(Exception):
    pass


def _require(cfg, key):
    value = getattr(cfg, key)
    if value is None:
        raise InputError(f"config key {key!r} is required for this command")
    if key in ("train_file", "test_file", "rul_file", "series_file", "cache", "model", "predictions") \
            and not os.path.exists(value):
        raise InputError(f"{key}: no such file: {value}")
    return value


def _write_tsv(path, header, rows):
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(v) for v in row) + "\n")
    return path


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{v:.10g}"
    return str(v)


# -- commands -------------------------------------------------------------------

def cmd_synth(cfg, out):
    """Write a generated run-to-failure dataset in the C-MAPSS text format."""
    bundle = data.generate_synthetic(n_units=cfg.synth_units, noise_level=cfg.synth_noise, censor_percent=0,
                                     seed=cfg.seed, n_sensors=cfg.synth_sensors,
                                     unit_variation=cfg.synth_unit_variation)
    train_path = os.path.join(out, "train_synthetic.txt")
    test_path = os.path.join(out, "test_synthetic.txt")
    rul_path = os.path.join(out, "RUL_synthetic.txt")
    data.write_cmapss(bundle.train, train_path)
    data.write_cmapss(bundle.test, test_path)
    with open(rul_path, "w") as fh:
        fh.writelines(f"{int(inst.true_rul)}\n" for inst in bundle.test)
    return f"{len(bundle.train)} train / {len(bundle.test)} test units"


def load_bundle(cfg):
    if cfg.train_file is not None:
        _require(cfg, "train_file")
        test, rul = cfg.test_file, cfg.rul_file
        if test is not None:
            _require(cfg, "test_file")
            _require(cfg, "rul_file")
        bundle = data.parse_cmapss(cfg.train_file, test, rul)
        if cfg.profile != "auto":
            bundle.profile = cfg.profile
        return bundle
    if cfg.profile in ("synthetic", "auto"):
        return data.generate_synthetic(n_units=cfg.synth_units, noise_level=cfg.synth_noise, seed=cfg.seed,
                                       n_sensors=cfg.synth_sensors, unit_variation=cfg.synth_unit_variation)
    raise InputError(f"profile {cfg.profile!r} needs train_file")


def cmd_prepare(cfg, out):
    if cfg.profile not in data.PROFILES + ("auto",):
        raise InputError(f"profile must be one of {data.PROFILES + ('auto',)}")
    prepared = data.prepare(load_bundle(cfg), cfg.censor_percent, cfg.seed, cfg.val_fraction, cfg.n_windows,
                            cfg.max_len)
    data.save_prepared(prepared, os.path.join(out, "prepared.cache"))
    counts = prepared.counts()
    _write_tsv(os.path.join(out, "counts.tsv"), ["quantity", "value"], sorted(counts.items()))
    return ", ".join(f"{k}={v}" for k, v in sorted(counts.items()))


def _load_cache(cfg):
    return data.load_prepared(_require(cfg, "cache"))


def _write_history(path, model):
    _write_tsv(path, ["iteration", "train_loss", "val_loss"], model.history_)


def cmd_train(cfg, out):
    mode = cfg.mode
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}, got {mode!r}")
    prepared = _load_cache(cfg)
    params = {**cfg.estimator_params(), "random_state": cfg.seed}
    if cfg.grid_search:
        best_params, model, results = grid_search(cfg.grid(), mode, prepared.train, prepared.validation, params)
        keys = sorted(cfg.grid())
        _write_tsv(os.path.join(out, "grid_results.tsv"), keys + ["val_loss", "diverged", "selected"],
                   [[r[k] for k in keys] + [r["val_loss"], r["diverged"], r["model"] is model] for r in results])
    else:
        model = train(params, mode, prepared.train, prepared.validation)

    normalizer = None
    if model.head == lstm.ORDINAL:
        val = prepared.validation.for_mode(mode)
        if len(val):
            ens = LSTMOrdinalEnsemble.from_members([model])
            normalizer = ens.fit_normalizer(val.inputs, val.values, val.censored).normalizer_
    save_model(model, os.path.join(out, "model.ckpt"), prepared.norm_stats, normalizer,
               extra={"mode": mode, "profile": prepared.profile})
    _write_history(os.path.join(out, "history.tsv"), model)
    if model.diverged_:
        raise TrainingDivergedError(f"training diverged after {model.n_iter_} iterations; "
                                    f"best finite snapshot saved to model.ckpt")
    return f"mode={mode} best_val_loss={model.best_loss_:.6g} iterations={model.n_iter_}"


def cmd_ensemble(cfg, out):
    mode = cfg.mode
    if mode not in ("or", "orc"):
        raise InputError(f"an ensemble needs an ordinal mode ('or' or 'orc'), got {mode!r}")
    prepared = _load_cache(cfg)
    template = LSTMOrdinalRegressor(head=lstm.ORDINAL, **cfg.estimator_params())
    tr = prepared.train.for_mode(mode)
    va = prepared.validation.for_mode(mode)
    val_kwargs = {"X_val": va.inputs, "y_val": va.values, "censored_val": va.censored} if len(va) else {}
    ens = LSTMOrdinalEnsemble(template, cfg.pool_size, cfg.n_members, random_state=cfg.seed)
    ens.fit(tr.inputs, tr.values, tr.censored, **val_kwargs)
    save_ensemble(ens, out, prepared.norm_stats, extra={"mode": mode, "profile": prepared.profile})
    chosen = set(int(i) for i in ens.selected_)
    _write_tsv(os.path.join(out, "pool.tsv"), ["index", "seed", "val_loss", "selected"],
               [[i, member_seed(cfg.seed, i), float(v), i in chosen] for i, v in enumerate(ens.pool_losses_)])
    return f"kept {len(ens.members_)} of {cfg.pool_size} models"


def _raw_series_windows(cfg, stats, profile):
    instances = data.read_series(_require(cfg, "series_file"),
                                 _require(cfg, "rul_file") if cfg.rul_file else None)
    if profile is None:
        profile = data.detect_profile(instances) if cfg.profile == "auto" else cfg.profile
    sets = []
    for inst in instances:
        feats = stats.apply(data.instance_features(inst, profile))
        sets.append(data.last_window(replace(inst, features=feats), cfg.max_len))
    return data.WindowSet.concat(sets)


def cmd_predict(cfg, out):
    predictor, stats, extra = load_predictor(_require(cfg, "model"))
    if cfg.series_file is not None:
        if stats is None:
            raise InputError("the model carries no normalization statistics for raw series")
        windows = _raw_series_windows(cfg, stats, extra.get("profile"))
    else:
        windows = _load_cache(cfg).test
        windows = data.WindowSet([x[-cfg.max_len:] for x in windows.inputs], windows.values, windows.censored,
                                 windows.unit_ids, windows.t0)
    if len(windows) == 0:
        raise InputError("no instances to predict")
    records = predict_records(predictor, windows.inputs)
    write_prediction_table(os.path.join(out, "predictions.tsv"), windows.unit_ids, windows.values, records)
    return f"{len(records)} rows, m={records.member_estimates.shape[1]}"


def _thresholds(cfg):
    return EvalThresholds(tau_e=cfg.tau_e, tau_u=cfg.tau_u, tau_early=cfg.tau_early, tau_late=cfg.tau_late,
                          tau_u_sweep=cfg.tau_u_sweep, tau_r_sweep=cfg.tau_r_sweep, tau_e_sweep=cfg.tau_e_sweep,
                          rul_max=cfg.rul_max)


def cmd_evaluate(cfg, out):
    table = read_prediction_table(_require(cfg, "predictions"))
    truth = table["true_rul"]
    if truth.size == 0 or np.any(np.isnan(truth)):
        raise InputError("every prediction row needs a true RUL for evaluation")
    th = _thresholds(cfg)
    report = evaluate(truth, table["rul_hat"], {"esd": table["u_esd"], "entropy": table["u_ent"]}, th)
    report.write(out)
    if cfg.diagnostics:
        write_diagnostics(cfg, table, th, os.path.join(out, "diagnostics"))
    return f"rmse={report.rmse:.6g} score={report.score:.6g} n={report.n}"


def write_diagnostics(cfg, table, th, out):
    """Nearest training engines and first-PC trajectories for confident but wrong predictions."""
    os.makedirs(out, exist_ok=True)
    prepared = _load_cache(cfg)
    predictor, _, _ = load_predictor(_require(cfg, "model"))
    if not isinstance(predictor, LSTMOrdinalEnsemble):
        raise InputError("diagnostics need an ordinal model or ensemble")
    abs_error = np.abs(table["rul_hat"] - np.minimum(table["true_rul"], th.rul_max))
    flagged = np.flatnonzero((table["u_esd"] <= th.tau_u) & (abs_error > th.tau_e))
    flagged = flagged[np.argsort(-abs_error[flagged], kind="stable")][:cfg.n_diagnostics]

    test = prepared.test
    train_ws = prepared.train.failed_only()
    rows = []
    if len(flagged) and len(train_ws):
        train_vecs = predictor.predict_records(train_ws.inputs).mean_proba
        position = {int(u): i for i, u in enumerate(test.unit_ids)}
        series = {name: {int(u): x for u, x in zip(ws.unit_ids, ws.inputs)} for name, ws in prepared.series.items()}
        for r in flagged:
            uid = int(table["unit_id"][r])
            if uid not in position:
                raise InputError(f"unit {uid} of the prediction table is not in the cache test split")
            query = predictor.predict_records([test.inputs[position[uid]]]).mean_proba[0]
            near = nearest_train_instances(query, train_vecs, train_ws.unit_ids, cfg.n_nearest)
            rows.append([uid, table["true_rul"][r], table["rul_hat"][r], abs_error[r], table["u_esd"][r]]
                        + [",".join(str(u) for u in near)])
            pcs = [("test", uid, series.get("test", {}).get(uid))]
            pcs += [("train", u, series.get("train", {}).get(u)) for u in near]
            pca_rows = []
            for role, unit, x in pcs:
                if x is None or x.shape[0] < 2:
                    continue
                pca_rows += [[role, unit, t + 1, v] for t, v in enumerate(pca_first_component(x))]
            _write_tsv(os.path.join(out, f"pca_unit{uid}.tsv"), ["role", "unit_id", "cycle", "pc1"], pca_rows)
    _write_tsv(os.path.join(out, "nearest.tsv"),
               ["unit_id", "true_rul", "rul_hat", "abs_error", "u_esd", "nearest_train_units"], rows)


HANDLERS = {"prepare": cmd_prepare, "train": cmd_train, "ensemble": cmd_ensemble, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "synth": cmd_synth}


# -- plumbing -------------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out):
    entries = []
    for root, _, files in os.walk(out):
        for name in files:
            path = os.path.join(root, name)
            rel = os.path.relpath(path, out)
            if rel != MANIFEST:
                entries.append((rel.replace(os.sep, "/"), sha256_file(path), os.path.getsize(path)))
    entries.sort()
    _write_tsv(os.path.join(out, MANIFEST), ["path", "sha256", "bytes"], entries)
    return entries


def build_parser():
    parser = argparse.ArgumentParser(prog="lstm-or", description="Ordinal-regression LSTM for remaining useful life.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="flat key = value config file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--mode", choices=MODES, help="training mode (overrides config)")
    parser.add_argument("--grid", action="store_true", help="grid-search the model size and learning rate")
    parser.add_argument("--diagnostics", action="store_true", help="write nearest-engine and PCA diagnostics")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    return parser


def resolve(args):
    cfg = load_config(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.mode is not None:
        updates["mode"] = args.mode
    if args.grid:
        updates["grid_search"] = True
    if args.diagnostics:
        updates["diagnostics"] = True
    return cfg.replace(**updates)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        os.makedirs(args.out, exist_ok=True)
        cfg.write(os.path.join(args.out, RESOLVED_CONFIG))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            message = HANDLERS[args.command](cfg, args.out)
    except (TrainingDivergedError, FloatingPointError) as exc:
        write_manifest(args.out)
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (InputError, ConfigError, ContainerError, data.DataFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_manifest(args.out)
    print(f"{args.command}: {message}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
