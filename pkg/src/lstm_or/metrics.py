"""RUL accuracy, uncertainty-quality metrics, threshold sweeps and PCA diagnostics.

Counting metrics return ``nan`` when their denominator is empty; curve tables
drop such thresholds instead of reporting zeros.
"""

import os
from dataclasses import dataclass, field

import numpy as np


@dataclass
class EvalThresholds:
    tau_e: float = 10.0
    tau_u: float = 0.2
    tau_early: float = 13.0
    tau_late: float = 10.0
    tau_u_sweep: tuple = tuple(np.round(np.arange(1, 16) * 0.1, 10))
    tau_r_sweep: tuple = tuple(float(v) for v in range(10, 131, 10))
    tau_e_sweep: tuple = tuple(float(v) for v in range(10, 131, 10))
    rul_max: float = 130.0

    def __post_init__(self):
        values = [self.tau_e, self.tau_u, self.tau_early, self.tau_late, self.rul_max]
        values += list(self.tau_u_sweep) + list(self.tau_r_sweep) + list(self.tau_e_sweep)
        if any(v <= 0 for v in values):
            raise ValueError("all thresholds must be positive")


def rmse(errors):
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("rmse of an empty error vector")
    return float(np.sqrt(np.mean(errors ** 2)))


def timeliness_score(errors, tau_early=13.0, tau_late=10.0):
    """Sum of ``exp(|e| / tau) - 1``; early (``e < 0``) errors use ``tau_early``."""
    errors = np.asarray(errors, dtype=np.float64)
    tau = np.where(errors < 0, tau_early, tau_late)
    return float(np.sum(np.expm1(np.abs(errors) / tau)))


def _ratio(num, den):
    return num / den if den > 0 else np.nan


def uncertainty_prf(abs_error, uncertainty, tau_u, tau_e):
    """Precision, recall and F1 of "certain" predictions being "correct".

    A prediction is certain when ``u <= tau_u`` and correct when
    ``|error| <= tau_e``. Precision is undefined (``nan``) when nothing is
    certain.
    """
    abs_error = np.asarray(abs_error, dtype=np.float64)
    certain = np.asarray(uncertainty, dtype=np.float64) <= tau_u
    correct = abs_error <= tau_e
    hits = int(np.sum(certain & correct))
    p = _ratio(hits, int(certain.sum()))
    r = _ratio(hits, abs_error.size)
    if np.isnan(p) or np.isnan(r):
        f1 = np.nan
    else:
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def precision_low_rul(true_rul, abs_error, uncertainty, tau_r, tau_u, tau_e):
    """Precision restricted to instances with true RUL at most ``tau_r``."""
    low = np.asarray(true_rul, dtype=np.float64) <= tau_r
    certain = low & (np.asarray(uncertainty, dtype=np.float64) <= tau_u)
    hits = int(np.sum(certain & (np.asarray(abs_error, dtype=np.float64) <= tau_e)))
    return _ratio(hits, int(certain.sum()))


def coverage_ce(abs_error, uncertainty, tau_e, tau_u):
    """Fraction of correct predictions that are also certain."""
    correct = np.asarray(abs_error, dtype=np.float64) <= tau_e
    hits = int(np.sum(correct & (np.asarray(uncertainty, dtype=np.float64) <= tau_u)))
    return _ratio(hits, int(correct.sum()))


@dataclass
class CurveTable:
    name: str
    thresholds: np.ndarray
    values: np.ndarray
    counts: np.ndarray

    def defined(self):
        keep = ~np.isnan(self.values)
        return CurveTable(self.name, self.thresholds[keep], self.values[keep], self.counts[keep])

    def to_tsv(self):
        lines = ["threshold\tvalue\tcount"]
        c = self.defined()
        lines += [f"{t:g}\t{v:.10g}\t{int(n)}" for t, v, n in zip(c.thresholds, c.values, c.counts)]
        return "\n".join(lines) + "\n"


def _filtered_mean(values, keep):
    n = int(keep.sum())
    return (float(np.mean(values[keep])) if n else np.nan), n


def threshold_curves(true_rul, abs_error, uncertainties, thresholds=EvalThresholds()):
    """Threshold sweeps for each named uncertainty array.

    Produces, per uncertainty ``name``: average error vs ``tau_u``; P, R and F1
    vs ``tau_u`` at fixed ``tau_e``; average uncertainty vs ``tau_e``;
    ``P_l`` vs ``tau_r`` and ``C_e`` vs ``tau_e`` at fixed ``tau_u``.
    """
    true_rul = np.asarray(true_rul, dtype=np.float64)
    abs_error = np.asarray(abs_error, dtype=np.float64)
    th = thresholds
    tables = {}

    def add(name, xs, rows):
        vals, counts = zip(*rows) if rows else ((), ())
        tables[name] = CurveTable(name, np.asarray(xs, float), np.asarray(vals, float), np.asarray(counts, int))

    for name, u in uncertainties.items():
        u = np.asarray(u, dtype=np.float64)
        tu = th.tau_u_sweep
        add(f"avg_error_vs_tau_u.{name}", tu, [_filtered_mean(abs_error, u <= t) for t in tu])
        prf = [uncertainty_prf(abs_error, u, t, th.tau_e) for t in tu]
        n_certain = [int(np.sum(u <= t)) for t in tu]
        add(f"precision_vs_tau_u.{name}", tu, [(p, n) for (p, _, _), n in zip(prf, n_certain)])
        add(f"recall_vs_tau_u.{name}", tu, [(r, abs_error.size) for _, r, _ in prf])
        add(f"f1_vs_tau_u.{name}", tu, [(f, n) for (_, _, f), n in zip(prf, n_certain)])
        te = th.tau_e_sweep
        add(f"avg_uncertainty_vs_tau_e.{name}", te, [_filtered_mean(u, abs_error <= t) for t in te])
        add(f"ce_vs_tau_e.{name}", te,
            [(coverage_ce(abs_error, u, t, th.tau_u), int(np.sum(abs_error <= t))) for t in te])
        tr = th.tau_r_sweep
        add(f"pl_vs_tau_r.{name}", tr,
            [(precision_low_rul(true_rul, abs_error, u, t, th.tau_u, th.tau_e),
              int(np.sum((true_rul <= t) & (u <= th.tau_u)))) for t in tr])
    return tables


def nearest_train_instances(query, train_vectors, train_unit_ids, k=3):
    """Unit ids of the ``k`` training units closest to ``query`` in Euclidean distance.

    A unit with several vectors is scored by its closest one. Ties go to
    the smaller unit id; with fewer than ``k`` units all are returned.
    """
    query = np.asarray(query, dtype=np.float64)
    train_vectors = np.atleast_2d(np.asarray(train_vectors, dtype=np.float64))
    train_unit_ids = np.asarray(train_unit_ids)
    if train_vectors.shape[1] != query.shape[0]:
        raise ValueError("query and training vectors differ in length")
    dist = np.sqrt(np.sum((train_vectors - query) ** 2, axis=1))
    best = {}
    for uid, d in zip(train_unit_ids.tolist(), dist.tolist()):
        if uid not in best or d < best[uid]:
            best[uid] = d
    ranked = sorted(best.items(), key=lambda item: (item[1], item[0]))
    return [uid for uid, _ in ranked[:k]]


def pca_first_component(series):
    """Project each row of a ``(T, p)`` matrix onto the top principal axis.

    Columns are centred first. The sign is chosen so that the last value is
    not below the first. A rank-0 matrix gives zeros.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a (T, p) matrix with T >= 2")
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / (x.shape[0] - 1)
    if not np.any(cov):
        return np.zeros(x.shape[0])
    _, vecs = np.linalg.eigh(cov)
    proj = centred @ vecs[:, -1]
    if proj[-1] < proj[0]:
        proj = -proj
    return proj


@dataclass
class EvalReport:
    n: int
    rmse: float
    score: float
    n_clipped: int
    tables: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    point_metrics: dict = field(default_factory=dict)

    def summary(self):
        lines = [f"instances\t{self.n}", f"rmse\t{self.rmse:.6g}", f"timeliness_score\t{self.score:.6g}",
                 f"true_rul_clipped\t{self.n_clipped}"]
        for key, value in self.point_metrics.items():
            lines.append(f"{key}\t{'absent' if np.isnan(value) else format(value, '.6g')}")
        lines += [f"note\t{n}" for n in self.notes]
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        paths = [os.path.join(out_dir, "summary.tsv")]
        with open(paths[0], "w") as fh:
            fh.write(self.summary())
        for name, table in self.tables.items():
            path = os.path.join(out_dir, f"curve_{name}.tsv")
            with open(path, "w") as fh:
                fh.write(table.to_tsv())
            paths.append(path)
        return paths


def evaluate(true_rul, estimate, uncertainties=None, thresholds=EvalThresholds()):
    """Full report; true RUL is clipped to ``rul_max`` before any error is formed."""
    true_rul = np.asarray(true_rul, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if true_rul.shape != estimate.shape or true_rul.size == 0:
        raise ValueError("need matching, non-empty truth and estimate arrays")
    clipped = np.minimum(true_rul, thresholds.rul_max)
    errors = estimate - clipped
    abs_error = np.abs(errors)
    report = EvalReport(int(true_rul.size), rmse(errors),
                        timeliness_score(errors, thresholds.tau_early, thresholds.tau_late),
                        int(np.sum(true_rul > thresholds.rul_max)))
    if report.n_clipped:
        report.notes.append(f"{report.n_clipped} true RUL values above {thresholds.rul_max:g} were clipped")
    uncertainties = {k: np.asarray(v, float) for k, v in (uncertainties or {}).items()
                     if v is not None and not np.all(np.isnan(v))}
    if uncertainties:
        report.tables = threshold_curves(clipped, abs_error, uncertainties, thresholds)
        for name, u in uncertainties.items():
            p, r, f1 = uncertainty_prf(abs_error, u, thresholds.tau_u, thresholds.tau_e)
            report.point_metrics[f"precision.{name}"] = p
            report.point_metrics[f"recall.{name}"] = r
            report.point_metrics[f"f1.{name}"] = f1
            report.point_metrics[f"p_l_tau_r20.{name}"] = precision_low_rul(
                clipped, abs_error, u, 20.0, thresholds.tau_u, thresholds.tau_e)
            report.point_metrics[f"c_e.{name}"] = coverage_ce(abs_error, u, thresholds.tau_e, thresholds.tau_u)
            curve = report.tables[f"avg_error_vs_tau_u.{name}"].defined().values
            trend = "non-decreasing" if np.all(np.diff(curve) >= -1e-12) else "not monotone"
            report.notes.append(f"average error vs tau_u ({name}) is {trend}")
    return report
