"""Multilayer LSTM with sigmoid output heads and exact backpropagation through time.

All arrays are float64. Batches of variable-length sequences are *pre-padded*:
a sequence of length ``n`` occupies the last ``n`` steps of the padded time
axis, so every sequence ends at the final step and its state stays exactly
zero until its first valid step.

Gate order inside every affine map is ``i, f, o, g``.
"""

from dataclasses import dataclass, field

import numpy as np

ORDINAL = "ordinal"
METRIC = "metric"

PROB_EPS = 1e-7


@dataclass
class LSTMLayer:
    """Affine map ``[x_t; z_{t-1}] -> 4h`` of one layer.

    ``weight`` has shape ``(4h, n_in + h)``; the first ``n_in`` columns act on
    the (dropped-out) layer input, the remaining ``h`` on the recurrent state.
    """

    weight: np.ndarray
    bias: np.ndarray

    @property
    def hidden_size(self):
        return self.bias.shape[0] // 4

    @property
    def input_size(self):
        return self.weight.shape[1] - self.hidden_size


@dataclass
class LSTMStack:
    layers: list

    @property
    def input_size(self):
        return self.layers[0].input_size

    @property
    def hidden_size(self):
        return self.layers[0].hidden_size

    @property
    def n_layers(self):
        return len(self.layers)


@dataclass
class Head:
    """Sigmoid output layer: ``K`` cumulative classifiers or one metric output."""

    kind: str
    weight: np.ndarray
    bias: np.ndarray

    @property
    def n_outputs(self):
        return self.bias.shape[0]


@dataclass
class ForwardTrace:
    """Everything needed to backpropagate through one forward pass."""

    stack: LSTMStack
    step_mask: np.ndarray  # (B, T) 1.0 on valid steps
    layer_inputs: list  # per layer, (B, T, n_in) after dropout
    dropout_masks: list  # per layer, (B, T, n_in) scaled mask or None
    gates: list  # per layer, (B, T, 4h) activated i, f, o, g
    cells: list  # per layer, (B, T, h)
    hidden: list  # per layer, (B, T, h)
    inputs: np.ndarray = field(repr=False, default=None)

    @property
    def final_hidden(self):
        return self.hidden[-1][:, -1, :]


def sigmoid(a):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(a, dtype=np.float64)))


def init_stack(input_size, hidden_size, n_layers, rng):
    """Uniform(-1/sqrt(h), 1/sqrt(h)) weights, zero biases, forget bias 1."""
    if input_size < 1 or hidden_size < 1 or n_layers < 1:
        raise ValueError("input_size, hidden_size and n_layers must be >= 1")
    bound = 1.0 / np.sqrt(hidden_size)
    layers = []
    n_in = input_size
    for _ in range(n_layers):
        weight = rng.uniform(-bound, bound, size=(4 * hidden_size, n_in + hidden_size))
        bias = np.zeros(4 * hidden_size)
        bias[hidden_size:2 * hidden_size] = 1.0
        layers.append(LSTMLayer(weight, bias))
        n_in = hidden_size
    return LSTMStack(layers)


def init_head(kind, hidden_size, n_outputs, rng):
    if kind not in (ORDINAL, METRIC):
        raise ValueError(f"unknown head kind {kind!r}")
    if kind == METRIC and n_outputs != 1:
        raise ValueError("metric head has exactly one output")
    bound = 1.0 / np.sqrt(hidden_size)
    weight = rng.uniform(-bound, bound, size=(n_outputs, hidden_size))
    return Head(kind, weight, np.zeros(n_outputs))


def pad_sequences(sequences, max_len=None):
    """Pre-pad a list of ``(T_i, p)`` arrays into ``(B, T, p)`` plus lengths.

    With ``max_len`` only the most recent ``max_len`` rows of each sequence are kept.
    """
    seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
    if max_len is not None:
        seqs = [s[-max_len:] for s in seqs]
    lengths = np.array([s.shape[0] for s in seqs], dtype=np.int64)
    if len(seqs) == 0:
        raise ValueError("empty batch")
    if lengths.min() < 1:
        raise ValueError("sequences must contain at least one step")
    p = seqs[0].shape[1]
    out = np.zeros((len(seqs), int(lengths.max()), p))
    for b, s in enumerate(seqs):
        if s.ndim != 2 or s.shape[1] != p:
            raise ValueError(f"sequence {b} has shape {s.shape}, expected (T, {p})")
        out[b, out.shape[1] - s.shape[0]:] = s
    return out, lengths


def _step_mask(batch, n_steps, lengths):
    if lengths is None:
        return np.ones((batch, n_steps))
    lengths = np.asarray(lengths)
    if lengths.shape != (batch,) or lengths.min() < 1 or lengths.max() > n_steps:
        raise ValueError("lengths must be in [1, T] for every sequence")
    return (np.arange(n_steps)[None, :] >= (n_steps - lengths)[:, None]).astype(np.float64)


def lstm_forward(x, stack, lengths=None, dropout=0.0, train=False, rng=None):
    """Run the stack over a batch and return ``(z_final, trace)``.

    Parameters
    ----------
    x : array of shape (T, p) or (B, T, p)
        Pre-padded input sequences.
    stack : LSTMStack
    lengths : array of shape (B,), optional
        Valid length of each pre-padded sequence; defaults to all ``T``.
    dropout : float
        Dropout rate on non-recurrent connections (each layer's input).
        Inverted dropout: surviving units are scaled by ``1/(1-rate)`` so
        inference needs no rescaling.
    train : bool
        Masks are sampled only in training mode.
    rng : numpy Generator
        Required when ``train`` and ``dropout > 0``.

    Returns
    -------
    z_final : array of shape (B, h), or (h,) for unbatched input
    trace : ForwardTrace
    """
    x = np.asarray(x, dtype=np.float64)
    unbatched = x.ndim == 2
    if unbatched:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"expected (B, T, p) input, got shape {x.shape}")
    batch, n_steps, p = x.shape
    if n_steps < 1:
        raise ValueError("sequence length must be >= 1")
    if p != stack.input_size:
        raise ValueError(f"input has {p} features, stack expects {stack.input_size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    if not 0.0 <= dropout < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    use_dropout = train and dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("training-mode dropout needs an rng")

    mask = _step_mask(batch, n_steps, lengths)
    m3 = mask[:, :, None]
    h = stack.hidden_size
    trace = ForwardTrace(stack, mask, [], [], [], [], [], inputs=x)

    layer_in = x
    for layer in stack.layers:
        if use_dropout:
            keep = rng.random(layer_in.shape) >= dropout
            dmask = keep / (1.0 - dropout)
            layer_in = layer_in * dmask
        else:
            dmask = None
        n_in = layer_in.shape[2]
        w_x = layer.weight[:, :n_in]
        w_h = layer.weight[:, n_in:]
        pre_x = layer_in @ w_x.T + layer.bias
        gates = np.empty((batch, n_steps, 4 * h))
        cells = np.empty((batch, n_steps, h))
        hidden = np.empty((batch, n_steps, h))
        z_prev = np.zeros((batch, h))
        c_prev = np.zeros((batch, h))
        for t in range(n_steps):
            a = pre_x[:, t] + z_prev @ w_h.T
            act = np.empty_like(a)
            act[:, :3 * h] = sigmoid(a[:, :3 * h])
            act[:, 3 * h:] = np.tanh(a[:, 3 * h:])
            i_g, f_g, o_g, g_g = act[:, :h], act[:, h:2 * h], act[:, 2 * h:3 * h], act[:, 3 * h:]
            m = m3[:, t]
            c_prev = m * (f_g * c_prev + i_g * g_g)
            z_prev = m * (o_g * np.tanh(c_prev))
            gates[:, t] = act
            cells[:, t] = c_prev
            hidden[:, t] = z_prev
        trace.layer_inputs.append(layer_in)
        trace.dropout_masks.append(dmask)
        trace.gates.append(gates)
        trace.cells.append(cells)
        trace.hidden.append(hidden)
        layer_in = hidden

    z_final = trace.final_hidden
    return (z_final[0] if unbatched else z_final), trace


def head_logits(z, head):
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != head.weight.shape[1]:
        raise ValueError(f"hidden vector of size {z.shape[-1]} does not match head input {head.weight.shape[1]}")
    return z @ head.weight.T + head.bias


_OPEN_LO = np.finfo(np.float64).tiny
_OPEN_HI = 1.0 - np.finfo(np.float64).epsneg


def to_probability(logits):
    """Sigmoid kept strictly inside (0, 1) even where float64 would round to 0 or 1."""
    return np.clip(sigmoid(logits), _OPEN_LO, _OPEN_HI)


def head_forward(z, head):
    """Sigmoid of the head's affine map; every component lies in (0, 1)."""
    return to_probability(head_logits(z, head))


# -- losses -------------------------------------------------------------------

def _known_count(mask):
    k = mask.sum(axis=-1)
    if np.any(k < 1):
        raise ValueError("every ordinal target needs at least one known label (K' >= 1)")
    return k


def ordinal_loss(prediction, labels, mask=None):
    """Masked mean binary cross-entropy of probabilities against ordinal labels.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]``. Masked positions add
    exactly zero whatever the prediction there. Works on a single target
    ``(K,)`` or returns the batch mean for ``(B, K)``.
    """
    prediction = np.asarray(prediction, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    mask = np.ones(labels.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    k = _known_count(mask)
    p = np.clip(prediction, PROB_EPS, 1.0 - PROB_EPS)
    terms = -(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))
    per_sample = np.where(mask, terms, 0.0).sum(axis=-1) / k
    return float(np.mean(per_sample))


def ordinal_loss_from_logits(logits, labels, mask):
    """Batch-mean masked cross-entropy in the stable logit form, with its gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    k = _known_count(mask)
    terms = np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))
    batch = logits.shape[0]
    loss = float(np.mean(np.where(mask, terms, 0.0).sum(axis=1) / k))
    grad = np.where(mask, sigmoid(logits) - labels, 0.0) / k[:, None] / batch
    return loss, grad


def metric_loss(prediction, target):
    """Squared error between the sigmoid output and the normalized RUL target."""
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if np.any(target < 0.0) or np.any(target > 1.0):
        raise ValueError("normalized targets must lie in [0, 1]")
    return float(np.mean((prediction - target) ** 2))


def metric_loss_from_logits(logits, target):
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    pred = sigmoid(logits)
    diff = pred - target
    loss = float(np.mean(diff ** 2))
    grad = (2.0 * diff * pred * (1.0 - pred) / logits.shape[0])[:, None]
    return loss, grad


def head_loss(logits, head_kind, targets):
    """Dispatch on head kind; ``targets`` is ``(labels, mask)`` or normalized RUL."""
    if head_kind == ORDINAL:
        labels, mask = targets
        return ordinal_loss_from_logits(logits, np.asarray(labels, float), np.asarray(mask, bool))
    if head_kind == METRIC:
        return metric_loss_from_logits(logits, targets)
    raise ValueError(f"unknown head kind {head_kind!r}")


# -- backward -----------------------------------------------------------------

def backward(trace, stack, head, dlogits):
    """Exact gradients given the loss gradient w.r.t. the head logits.

    Returns ``(stack_grad, head_grad)`` with the same structure as the
    parameters.
    """
    if trace.stack is not stack:
        raise ValueError("trace was produced with a different parameter bundle")
    z_top = trace.final_hidden
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != (z_top.shape[0], head.n_outputs):
        raise ValueError(f"dlogits shape {dlogits.shape} does not match batch/head")

    head_grad = Head(head.kind, dlogits.T @ z_top, dlogits.sum(axis=0))
    h = stack.hidden_size
    batch, n_steps = trace.step_mask.shape
    m3 = trace.step_mask[:, :, None]

    # gradient arriving at each layer's output sequence
    d_out = np.zeros((batch, n_steps, h))
    d_out[:, -1] = dlogits @ head.weight

    layer_grads = [None] * stack.n_layers
    for l in reversed(range(stack.n_layers)):
        layer = stack.layers[l]
        gates = trace.gates[l]
        cells = trace.cells[l]
        hidden = trace.hidden[l]
        layer_in = trace.layer_inputs[l]
        n_in = layer_in.shape[2]
        w_h = layer.weight[:, n_in:]

        d_pre = np.empty((batch, n_steps, 4 * h))
        dw_h = np.zeros((4 * h, h))
        dz_next = np.zeros((batch, h))
        dc_next = np.zeros((batch, h))
        for t in reversed(range(n_steps)):
            m = m3[:, t]
            act = gates[:, t]
            i_g, f_g, o_g, g_g = act[:, :h], act[:, h:2 * h], act[:, 2 * h:3 * h], act[:, 3 * h:]
            tanh_c = np.tanh(cells[:, t])
            c_prev = cells[:, t - 1] if t > 0 else np.zeros((batch, h))
            z_prev = hidden[:, t - 1] if t > 0 else np.zeros((batch, h))

            dz = (d_out[:, t] + dz_next) * m
            d_o = dz * tanh_c
            dc = (dc_next + dz * o_g * (1.0 - tanh_c ** 2)) * m
            d_i = dc * g_g
            d_g = dc * i_g
            d_f = dc * c_prev
            dc_next = dc * f_g

            da = d_pre[:, t]
            da[:, :h] = d_i * i_g * (1.0 - i_g)
            da[:, h:2 * h] = d_f * f_g * (1.0 - f_g)
            da[:, 2 * h:3 * h] = d_o * o_g * (1.0 - o_g)
            da[:, 3 * h:] = d_g * (1.0 - g_g ** 2)
            dw_h += da.T @ z_prev
            dz_next = da @ w_h

        flat_da = d_pre.reshape(-1, 4 * h)
        dw_x = flat_da.T @ layer_in.reshape(-1, n_in)
        layer_grads[l] = LSTMLayer(np.hstack([dw_x, dw_h]), flat_da.sum(axis=0))
        if l > 0:
            d_in = d_pre @ layer.weight[:, :n_in]
            if trace.dropout_masks[l] is not None:
                d_in = d_in * trace.dropout_masks[l]
            d_out = d_in
    return LSTMStack(layer_grads), head_grad


def loss_and_grad(stack, head, x, lengths, targets, dropout=0.0, train=False, rng=None):
    """Forward, loss and exact gradient for one batch.

    ``targets`` is ``(labels, mask)`` for an ordinal head or an array of
    normalized RUL values for a metric head.
    """
    z, trace = lstm_forward(x, stack, lengths, dropout=dropout, train=train, rng=rng)
    logits = head_logits(z, head)
    loss, dlogits = head_loss(logits, head.kind, targets)
    stack_grad, head_grad = backward(trace, stack, head, dlogits)
    return loss, stack_grad, head_grad


def predict_proba(stack, head, x, lengths=None):
    z, _ = lstm_forward(x, stack, lengths)
    return head_forward(z, head)


# -- flat views ---------------------------------------------------------------

def param_arrays(stack, head):
    """Parameter arrays in declared order: per layer weight, bias; then head weight, bias."""
    arrays = []
    for layer in stack.layers:
        arrays.extend([layer.weight, layer.bias])
    arrays.extend([head.weight, head.bias])
    return arrays


def from_arrays(arrays, head_kind):
    arrays = list(arrays)
    if len(arrays) < 4 or len(arrays) % 2:
        raise ValueError("expected weight/bias pairs for >= 1 layer plus a head")
    layers = [LSTMLayer(arrays[i], arrays[i + 1]) for i in range(0, len(arrays) - 2, 2)]
    return LSTMStack(layers), Head(head_kind, arrays[-2], arrays[-1])
