"""Ensembles of ordinal LSTM models: averaged RUL plus ESD and entropy uncertainty."""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from . import lstm
from .ordinal import IntervalScheme, decode_rul
from .training import LSTMOrdinalRegressor, TrainingDivergedError, member_seed
from .utils import check_sequences


def _shifted_mean(values, axis=-1):
    # anchoring at the first member keeps identical members bit-exact
    anchor = np.take(values, [0], axis=axis)
    return np.squeeze(anchor, axis=axis) + np.mean(values - anchor, axis=axis)


def esd(estimates):
    """Population standard deviation of member estimates along the last axis."""
    estimates = np.asarray(estimates, dtype=np.float64)
    if estimates.shape[-1] == 0:
        raise ValueError("need at least one estimate")
    mean = _shifted_mean(estimates)
    return np.sqrt(np.mean((estimates - mean[..., None]) ** 2, axis=-1))


def entropy_uncertainty(mean_prediction):
    """Entropy over the ``K + 1`` monotone label vectors under independent classifiers.

    For the vector whose first ``k`` entries are 0 and the rest 1,
    ``P = prod_{j<k}(1 - y_j) * prod_{j>=k} y_j``. The probabilities are not
    renormalized over the monotone set. Uses natural log and ``0 log 0 = 0``.
    Accepts ``(K,)`` or ``(N, K)``.
    """
    y = np.asarray(mean_prediction, dtype=np.float64)
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("mean prediction must lie in [0, 1]")
    single = y.ndim == 1
    y = np.atleast_2d(y)
    n, k = y.shape
    zeros_prefix = np.concatenate([np.ones((n, 1)), np.cumprod(1.0 - y, axis=1)], axis=1)
    ones_suffix = np.concatenate([np.cumprod(y[:, ::-1], axis=1)[:, ::-1], np.ones((n, 1))], axis=1)
    prob = zeros_prefix * ones_suffix
    safe = np.where(prob > 0, prob, 1.0)
    ent = -np.sum(np.where(prob > 0, prob * np.log(safe), 0.0), axis=1)
    ent = np.maximum(ent, 0.0)
    return float(ent[0]) if single else ent


@dataclass
class UncertaintyNormalizer:
    """Min-max scaling of raw ESD and entropy fitted on validation predictions."""

    esd_min: float = 0.0
    esd_max: float = 0.0
    ent_min: float = 0.0
    ent_max: float = 0.0

    @classmethod
    def fit(cls, u_esd_raw, u_ent_raw):
        u_esd_raw = np.asarray(u_esd_raw, dtype=np.float64)
        u_ent_raw = np.asarray(u_ent_raw, dtype=np.float64)
        if u_esd_raw.size == 0:
            raise ValueError("cannot fit a normalizer on an empty validation set")
        return cls(float(u_esd_raw.min()), float(u_esd_raw.max()),
                   float(u_ent_raw.min()), float(u_ent_raw.max()))

    @staticmethod
    def _scale(raw, lo, hi):
        raw = np.asarray(raw, dtype=np.float64)
        if hi == lo:
            return np.zeros_like(raw)
        return (raw - lo) / (hi - lo)

    def transform_esd(self, raw):
        return self._scale(raw, self.esd_min, self.esd_max)

    def transform_ent(self, raw):
        return self._scale(raw, self.ent_min, self.ent_max)

    def to_meta(self):
        return {"esd_min": self.esd_min, "esd_max": self.esd_max, "ent_min": self.ent_min, "ent_max": self.ent_max}

    @classmethod
    def from_meta(cls, meta):
        return cls(**{k: float(meta[k]) for k in ("esd_min", "esd_max", "ent_min", "ent_max")})


@dataclass
class PredictionRecords:
    """Ensemble predictions for ``N`` inputs from ``m`` members."""

    member_estimates: np.ndarray  # (N, m)
    estimate: np.ndarray  # (N,)
    mean_proba: np.ndarray  # (N, K)
    u_esd_raw: np.ndarray
    u_ent_raw: np.ndarray
    u_esd: np.ndarray
    u_ent: np.ndarray

    def __len__(self):
        return self.estimate.shape[0]


def records_from_probas(probas, scheme, normalizer=None):
    """Combine member probability arrays of shape ``(m, N, K)`` into records."""
    probas = np.asarray(probas, dtype=np.float64)
    member_estimates = decode_rul(probas, scheme).T
    estimate = _shifted_mean(member_estimates)
    mean_proba = _shifted_mean(probas, axis=0)
    u_esd_raw = esd(member_estimates)
    u_ent_raw = entropy_uncertainty(mean_proba)
    if normalizer is None:
        u_esd = np.full_like(u_esd_raw, np.nan)
        u_ent = np.full_like(u_ent_raw, np.nan)
    else:
        u_esd = normalizer.transform_esd(u_esd_raw)
        u_ent = normalizer.transform_ent(u_ent_raw)
    return PredictionRecords(member_estimates, estimate, mean_proba, u_esd_raw, u_ent_raw, u_esd, u_ent)


def select_members(losses, n_members):
    """Indices of the ``n_members`` lowest finite losses, ascending (ties by pool order)."""
    losses = np.asarray(losses, dtype=np.float64)
    finite = np.flatnonzero(np.isfinite(losses))
    if len(finite) < n_members:
        raise TrainingDivergedError(f"only {len(finite)} usable models for an ensemble of {n_members}")
    order = finite[np.argsort(losses[finite], kind="stable")]
    return order[:n_members]


class LSTMOrdinalEnsemble(BaseEstimator):
    """Average of ordinal LSTM models differing only in their random seeds.

    ``pool_size`` models are trained from seeds derived from
    ``random_state``; the ``n_members`` with the lowest validation loss are
    kept. Member disagreement (ESD) and the entropy of the averaged
    classifier outputs serve as uncertainty, min-max normalized on the
    validation windows with exact RUL.

    Parameters
    ----------
    estimator : LSTMOrdinalRegressor
        Template with an ordinal head; cloned for every pool model.
    pool_size : int
    n_members : int
    random_state : int
    """

    def __init__(self, estimator=None, pool_size=10, n_members=6, random_state=0):
        self.estimator = estimator
        self.pool_size = pool_size
        self.n_members = n_members
        self.random_state = random_state

    def fit(self, X, y, censored=None, X_val=None, y_val=None, censored_val=None):
        if not 1 <= self.n_members <= self.pool_size:
            raise ValueError("need 1 <= n_members <= pool_size")
        template = self.estimator if self.estimator is not None else LSTMOrdinalRegressor()
        if template.head != lstm.ORDINAL:
            raise ValueError("ensemble members must use the ordinal head")
        pool = []
        for i in range(self.pool_size):
            est = clone(template).set_params(random_state=member_seed(self.random_state, i))
            est.fit(X, y, censored, X_val=X_val, y_val=y_val, censored_val=censored_val)
            pool.append(est)
        losses = [m.best_loss_ if not m.diverged_ else math.inf for m in pool]
        keep = select_members(losses, self.n_members)
        self.pool_ = pool
        self.pool_losses_ = np.array([m.best_loss_ for m in pool])
        self.selected_ = keep
        self.members_ = [pool[i] for i in keep]
        self.normalizer_ = None
        if X_val is not None:
            self.fit_normalizer(X_val, y_val, censored_val)
        return self

    @classmethod
    def from_members(cls, members, normalizer=None):
        ens = cls(estimator=members[0], pool_size=len(members), n_members=len(members))
        ens.members_ = list(members)
        ens.pool_ = list(members)
        ens.selected_ = np.arange(len(members))
        ens.pool_losses_ = np.array([getattr(m, "best_loss_", math.nan) for m in members])
        ens.normalizer_ = normalizer
        return ens

    @property
    def scheme_(self):
        return self.members_[0].scheme_

    def _probas(self, X):
        check_is_fitted(self, "members_")
        seqs = check_sequences(X, self.members_[0].n_features_in_)
        return np.stack([m.predict_proba(seqs) for m in self.members_])

    def fit_normalizer(self, X_val, y_val=None, censored_val=None):
        """Fit min-max uncertainty scaling on validation windows with exact RUL."""
        seqs = check_sequences(X_val)
        if censored_val is not None:
            exact = ~np.asarray(censored_val, dtype=bool)
            if exact.any():
                seqs = [s for s, e in zip(seqs, exact) if e]
        recs = records_from_probas(self._probas(seqs), self.scheme_)
        self.normalizer_ = UncertaintyNormalizer.fit(recs.u_esd_raw, recs.u_ent_raw)
        return self

    def predict_records(self, X):
        return records_from_probas(self._probas(X), self.scheme_, self.normalizer_)

    def predict(self, X):
        return self.predict_records(X).estimate


def scheme_of(models):
    schemes = {(m.rul_max, m.n_intervals) for m in models}
    if len(schemes) != 1:
        raise ValueError("ensemble members disagree on the interval scheme")
    rul_max, k = schemes.pop()
    return IntervalScheme(float(rul_max), int(k))
