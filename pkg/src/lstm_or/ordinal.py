"""Ordinal multi-label targets for RUL and their decoding back to cycles.

The RUL range ``[0, r_u]`` is cut into ``K`` intervals of width ``c``; interval
``j`` (1-based) is ``((j-1)c, jc]`` and an RUL ``r`` falls into
``k = ceil(r / c)``. Classifier ``j`` predicts whether ``r <= jc``.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class IntervalScheme:
    rul_max: float = 130.0
    n_intervals: int = 10

    def __post_init__(self):
        if self.n_intervals < 1:
            raise ValueError("n_intervals must be >= 1")
        if self.interval_length < 1:
            raise ValueError("interval length must be >= 1 cycle")

    @property
    def interval_length(self):
        return self.rul_max / self.n_intervals

    def interval_index(self, r):
        """1-based interval of an RUL after clipping to ``rul_max``, clamped to [1, K]."""
        r = min(float(r), self.rul_max)
        return min(self.n_intervals, max(1, math.ceil(_snap(r / self.interval_length))))


def _snap(ratio):
    # 39/13 style ratios must hit the integer exactly before ceil
    nearest = round(ratio)
    return float(nearest) if abs(ratio - nearest) < 1e-9 else ratio


@dataclass(frozen=True)
class OrdinalTarget:
    """Labels for the ``K`` classifiers; ``mask`` marks the known positions."""

    labels: np.ndarray
    mask: np.ndarray

    @property
    def known_count(self):
        return int(self.mask.sum())

    @property
    def usable(self):
        return self.known_count > 0


def encode_failed(r, scheme=IntervalScheme()):
    """Full target for an exact RUL: zeros before interval ``k``, ones from ``k`` on."""
    if r < 0:
        raise ValueError(f"RUL must be non-negative, got {r}")
    k = scheme.interval_index(r)
    labels = (np.arange(1, scheme.n_intervals + 1) >= k).astype(np.float64)
    return OrdinalTarget(labels, np.ones(scheme.n_intervals, dtype=bool))


def encode_censored(lower_bound, scheme=IntervalScheme()):
    """Partial target for an RUL known only to exceed ``lower_bound``.

    With ``k' = ceil(min(lower_bound, r_u) / c)`` the first ``k' - 1`` labels
    are known zeros and the rest are masked. A bound below one interval
    yields a target with no known labels (``usable`` is False).
    """
    if lower_bound < 0:
        raise ValueError(f"lower bound must be non-negative, got {lower_bound}")
    lb = min(float(lower_bound), scheme.rul_max)
    k_prime = math.ceil(_snap(lb / scheme.interval_length))
    known = max(0, k_prime - 1)
    mask = np.arange(scheme.n_intervals) < known
    return OrdinalTarget(np.zeros(scheme.n_intervals), mask)


def encode_batch(values, censored, scheme=IntervalScheme()):
    """Stack targets for arrays of exact RULs / lower bounds into ``(B, K)`` labels and mask."""
    targets = [encode_censored(v, scheme) if c else encode_failed(v, scheme)
               for v, c in zip(values, censored)]
    labels = np.stack([t.labels for t in targets]) if targets else np.zeros((0, scheme.n_intervals))
    mask = np.stack([t.mask for t in targets]) if targets else np.zeros((0, scheme.n_intervals), bool)
    return labels, mask


def decode_rul(prediction, scheme=IntervalScheme()):
    """Point estimate ``r_u * (1 - mean_j y_j)``; accepts ``(K,)`` or ``(N, K)``."""
    prediction = np.asarray(prediction, dtype=np.float64)
    if prediction.shape[-1] != scheme.n_intervals:
        raise ValueError(f"prediction has {prediction.shape[-1]} components, scheme has {scheme.n_intervals}")
    return scheme.rul_max * (1.0 - prediction.mean(axis=-1))
