"""Seed streams and input validation shared by the estimators and the CLI."""

import hashlib

import numpy as np


def derive_seed(master_seed, name):
    """Integer seed of the named sub-stream of ``master_seed``.

    Names used across the package: ``"split"``, ``"censor"``, ``"windows"``,
    ``"synth"``, ``"member:<i>"``, ``"init"``, ``"shuffle"``, ``"dropout"``.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(key,))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(master_seed, name):
    return np.random.default_rng(derive_seed(master_seed, name))


def check_sequences(X, n_features=None):
    """Validate a list of ``(T_i, p)`` sequences and return them as float arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        seqs = list(X)
    else:
        seqs = [np.asarray(s, dtype=np.float64) for s in X]
    if len(seqs) == 0:
        raise ValueError("X contains no sequences")
    seqs = [np.asarray(s, dtype=np.float64) for s in seqs]
    p = seqs[0].shape[1] if seqs[0].ndim == 2 else None
    for i, s in enumerate(seqs):
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError(f"sequence {i} must be a non-empty (T, p) array, got shape {s.shape}")
        if s.shape[1] != p:
            raise ValueError(f"sequence {i} has {s.shape[1]} features, expected {p}")
        if not np.all(np.isfinite(s)):
            raise ValueError(f"sequence {i} contains non-finite values")
    if n_features is not None and p != n_features:
        raise ValueError(f"X has {p} features, but the model was fitted with {n_features}")
    return seqs


def check_targets(y, n, censored=None):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != n:
        raise ValueError(f"y has {y.shape[0]} entries for {n} sequences")
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise ValueError("RUL targets must be finite and non-negative")
    if censored is None:
        censored = np.zeros(n, dtype=bool)
    censored = np.asarray(censored, dtype=bool).reshape(-1)
    if censored.shape[0] != n:
        raise ValueError("censored must have one flag per sequence")
    return y, censored
