"""Mini-batch training of a single LSTM model with Adam and early stopping."""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.model_selection import ParameterGrid
from sklearn.utils.validation import check_is_fitted

from . import lstm
from .ordinal import IntervalScheme, decode_rul, encode_batch
from .utils import check_sequences, check_targets, derive_seed, make_rng

MODES = ("mr", "or", "orc")
DEFAULT_GRID = {"hidden_size": [50, 60, 70, 80, 90, 100], "n_layers": [2, 3], "learning_rate": [0.001, 0.005]}


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(params):
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns new arrays and a new state."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
    t = state.t + 1
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_p.append(p - learning_rate * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


def clip_by_global_norm(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm


class EarlyStopping:
    """Tracks the best validation loss; stops after ``patience`` evaluations without improvement."""

    def __init__(self, patience=10):
        self.patience = patience
        self.best_loss = math.inf
        self.best_iteration = None
        self.counter = 0

    def __call__(self, loss, iteration):
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_iteration = iteration
            self.counter = 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self):
        return self.counter >= self.patience


class LSTMOrdinalRegressor(RegressorMixin, BaseEstimator):
    """Deep LSTM that estimates RUL through ordinal or metric regression.

    With ``head="ordinal"`` the network predicts ``n_intervals`` cumulative
    probabilities trained with masked cross-entropy, so censored sequences
    (whose target is only a lower bound) contribute their known labels.
    With ``head="metric"`` it regresses ``min(r, rul_max) / rul_max`` with
    squared error and accepts exact targets only.

    Parameters
    ----------
    head : {"ordinal", "metric"}
    hidden_size, n_layers : int
        Units per LSTM layer and number of stacked layers.
    learning_rate : float
        Adam step size.
    dropout : float
        Rate on non-recurrent connections during training.
    batch_size : int
    max_iter : int
        Maximum number of mini-batch updates.
    patience : int
        Validation evaluations without improvement before stopping.
    eval_every : int or None
        Updates between validation evaluations; ``None`` means one pass over
        the training windows.
    grad_clip : float or None
        Global gradient-norm clip.
    rul_max, n_intervals : float, int
        RUL cap and number of ordinal intervals.
    max_len : int
        Only the most recent ``max_len`` steps of each sequence are used.
    random_state : int or None

    Attributes
    ----------
    stack_, head_ : best-validation parameters
    best_loss_ : float
    history_ : list of (iteration, train_loss, val_loss)
    n_iter_ : int
    diverged_ : bool
    n_excluded_ : int
        Censored sequences dropped because they carry no known label.
    """

    def __init__(self, head="ordinal", hidden_size=50, n_layers=2, learning_rate=0.001, dropout=0.2,
                 batch_size=32, max_iter=2000, patience=10, eval_every=None, grad_clip=5.0,
                 rul_max=130.0, n_intervals=10, max_len=360, random_state=None):
        self.head = head
        self.hidden_size = hidden_size
        self.n_layers = n_layers
        self.learning_rate = learning_rate
        self.dropout = dropout
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.patience = patience
        self.eval_every = eval_every
        self.grad_clip = grad_clip
        self.rul_max = rul_max
        self.n_intervals = n_intervals
        self.max_len = max_len
        self.random_state = random_state

    # -- helpers --------------------------------------------------------------

    @property
    def scheme_(self):
        return IntervalScheme(float(self.rul_max), int(self.n_intervals))

    def _validate_params(self):
        if self.head not in (lstm.ORDINAL, lstm.METRIC):
            raise ValueError(f"head must be 'ordinal' or 'metric', got {self.head!r}")
        if self.hidden_size < 1 or self.n_layers < 1 or self.batch_size < 1:
            raise ValueError("hidden_size, n_layers and batch_size must be >= 1")
        if self.learning_rate < 0 or not 0 <= self.dropout < 1:
            raise ValueError("learning_rate must be >= 0 and dropout in [0, 1)")

    def _targets(self, y, censored):
        """Training targets plus the indices of usable sequences."""
        if self.head == lstm.METRIC:
            if np.any(censored):
                raise ValueError("the metric head cannot use censored targets")
            return np.minimum(y, self.rul_max) / self.rul_max, np.arange(len(y))
        labels, mask = encode_batch(y, censored, self.scheme_)
        keep = np.flatnonzero(mask.sum(axis=1) > 0)
        return (labels, mask), keep

    @staticmethod
    def _take(targets, idx):
        if isinstance(targets, tuple):
            return targets[0][idx], targets[1][idx]
        return targets[idx]

    def _logits(self, stack, head, seqs, chunk=256):
        order = np.argsort([s.shape[0] for s in seqs], kind="stable")
        out = np.empty((len(seqs), head.n_outputs))
        for start in range(0, len(seqs), chunk):
            idx = order[start:start + chunk]
            x, lengths = lstm.pad_sequences([seqs[i] for i in idx])
            z, _ = lstm.lstm_forward(x, stack, lengths)
            out[idx] = lstm.head_logits(z, head)
        return out

    def _mean_loss(self, stack, head, seqs, targets):
        logits = self._logits(stack, head, seqs)
        loss, _ = lstm.head_loss(logits, head.kind, targets)
        return loss

    # -- estimator API --------------------------------------------------------

    def fit(self, X, y, censored=None, X_val=None, y_val=None, censored_val=None):
        """Train on sequences ``X`` with RUL targets ``y``.

        ``censored[i]`` marks ``y[i]`` as a lower bound rather than an exact
        RUL. Validation data drives early stopping; without it the training
        loss over all sequences is monitored instead.
        """
        self._validate_params()
        seqs = [s[-self.max_len:] for s in check_sequences(X)]
        y, censored = check_targets(y, len(seqs), censored)
        targets, keep = self._targets(y, censored)
        self.n_excluded_ = int(len(seqs) - len(keep))
        if len(keep) == 0:
            raise ValueError("no training sequence carries a usable target")
        seqs = [seqs[i] for i in keep]
        targets = self._take(targets, keep)
        self.n_features_in_ = seqs[0].shape[1]

        if X_val is not None:
            val_seqs = [s[-self.max_len:] for s in check_sequences(X_val, self.n_features_in_)]
            yv, cv = check_targets(y_val, len(val_seqs), censored_val)
            val_targets, vkeep = self._targets(yv, cv)
            val_seqs = [val_seqs[i] for i in vkeep]
            val_targets = self._take(val_targets, vkeep)
            if not val_seqs:
                val_seqs, val_targets = seqs, targets
        else:
            val_seqs, val_targets = seqs, targets

        seed = self.random_state
        if seed is None:
            seed = int(np.random.SeedSequence().generate_state(1)[0])
        init_rng = make_rng(seed, "init")
        shuffle_rng = make_rng(seed, "shuffle")
        drop_rng = make_rng(seed, "dropout")

        n_out = self.n_intervals if self.head == lstm.ORDINAL else 1
        stack = lstm.init_stack(self.n_features_in_, self.hidden_size, self.n_layers, init_rng)
        head = lstm.init_head(self.head, self.hidden_size, n_out, init_rng)
        params = lstm.param_arrays(stack, head)
        state = adam_init(params)

        n = len(seqs)
        batch_size = min(self.batch_size, n)
        eval_every = self.eval_every or max(1, math.ceil(n / batch_size))
        stopper = EarlyStopping(self.patience)
        best = params
        self.history_ = []
        self.diverged_ = False

        stopper(self._mean_loss(stack, head, val_seqs, val_targets), 0)
        self.history_.append((0, math.nan, stopper.best_loss))

        order = shuffle_rng.permutation(n)
        pos = 0
        running = []
        it = 0
        for it in range(1, self.max_iter + 1):
            if pos + batch_size > n:
                order = shuffle_rng.permutation(n)
                pos = 0
            idx = order[pos:pos + batch_size]
            pos += batch_size
            x, lengths = lstm.pad_sequences([seqs[i] for i in idx])
            loss, sg, hg = lstm.loss_and_grad(stack, head, x, lengths, self._take(targets, idx),
                                              dropout=self.dropout, train=True, rng=drop_rng)
            grads = lstm.param_arrays(sg, hg)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                self.diverged_ = True
                warnings.warn(f"training diverged at iteration {it}; keeping the best finite snapshot",
                              RuntimeWarning)
                break
            running.append(loss)
            grads, _ = clip_by_global_norm(grads, self.grad_clip)
            params, state = adam_step(params, grads, state, self.learning_rate)
            stack, head = lstm.from_arrays(params, self.head)

            if it % eval_every == 0 or it == self.max_iter:
                val_loss = self._mean_loss(stack, head, val_seqs, val_targets)
                self.history_.append((it, float(np.mean(running)), val_loss))
                running = []
                if not math.isfinite(val_loss):
                    self.diverged_ = True
                    warnings.warn(f"validation loss is not finite at iteration {it}", RuntimeWarning)
                    break
                if stopper(val_loss, it):
                    best = params
                if stopper.should_stop:
                    break

        self.n_iter_ = it
        self.best_loss_ = stopper.best_loss
        self.best_iteration_ = stopper.best_iteration
        self.stack_, self.head_ = lstm.from_arrays([p.copy() for p in best], self.head)
        return self

    def predict_proba(self, X):
        """Per-interval probabilities, shape ``(n, n_intervals)`` (ordinal head only)."""
        check_is_fitted(self, "stack_")
        if self.head != lstm.ORDINAL:
            raise AttributeError("predict_proba is only available for the ordinal head")
        seqs = [s[-self.max_len:] for s in check_sequences(X, self.n_features_in_)]
        return lstm.to_probability(self._logits(self.stack_, self.head_, seqs))

    def predict(self, X):
        """RUL point estimates in cycles."""
        check_is_fitted(self, "stack_")
        seqs = [s[-self.max_len:] for s in check_sequences(X, self.n_features_in_)]
        out = lstm.to_probability(self._logits(self.stack_, self.head_, seqs))
        if self.head == lstm.ORDINAL:
            return decode_rul(out, self.scheme_)
        return out[:, 0] * self.rul_max

    def loss(self, X, y, censored=None):
        """Mean training-objective loss of the fitted parameters on ``(X, y)``."""
        check_is_fitted(self, "stack_")
        seqs = [s[-self.max_len:] for s in check_sequences(X, self.n_features_in_)]
        y, censored = check_targets(y, len(seqs), censored)
        targets, keep = self._targets(y, censored)
        return self._mean_loss(self.stack_, self.head_, [seqs[i] for i in keep], self._take(targets, keep))


def head_for_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return lstm.METRIC if mode == "mr" else lstm.ORDINAL


def train(params, mode, train_windows, val_windows=None):
    """Fit one model for ``mode`` (``mr``, ``or`` or ``orc``) on window sets.

    ``mr`` and ``or`` see failed windows only; ``orc`` also uses censored ones.
    """
    est = params if isinstance(params, LSTMOrdinalRegressor) else LSTMOrdinalRegressor(**params)
    est = clone(est).set_params(head=head_for_mode(mode))
    tr = train_windows.for_mode(mode)
    if len(tr) == 0:
        raise ValueError(f"no training windows usable by mode {mode!r}")
    kwargs = {}
    if val_windows is not None:
        va = val_windows.for_mode(mode)
        if len(va):
            kwargs = {"X_val": va.inputs, "y_val": va.values, "censored_val": va.censored}
    return est.fit(tr.inputs, tr.values, tr.censored, **kwargs)


def grid_search(grid, mode, train_windows, val_windows, base_params=None):
    """Train one model per grid point and keep the lowest validation loss.

    Ties go to the smaller hidden size, then fewer layers, then the smaller
    learning rate. Returns ``(best_params, best_model, results)``.
    """
    points = list(ParameterGrid(grid))
    if not points:
        raise ValueError("empty grid")
    base = dict(base_params or {})
    results = []
    for point in points:
        params = {**base, **point}
        model = train(params, mode, train_windows, val_windows)
        results.append({**point, "val_loss": model.best_loss_, "diverged": model.diverged_, "model": model})
    ok = [r for r in results if math.isfinite(r["val_loss"])]
    if not ok:
        raise TrainingDivergedError("every grid point diverged")

    def key(r):
        return (r["val_loss"], r.get("hidden_size", 0), r.get("n_layers", 0), r.get("learning_rate", 0.0))

    best = min(ok, key=key)
    best_params = {**base, **{k: best[k] for k in points[0]}}
    return best_params, best["model"], results


def member_seed(master_seed, index):
    return derive_seed(master_seed, f"member:{index}")
