"""Dense differentiable kernel: the handful of ops the model needs.

Every op returns its output together with a closure that maps the
upstream gradient back onto the inputs, accumulating parameter
gradients in place.  All math is float64; there is no general tape,
callers compose the closures themselves.
"""

from __future__ import annotations

import numpy as np


class Param:
    """Trainable 2-d tensor with gradient and optimizer state buffers."""

    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)
        if self.value.ndim != 2:
            raise ValueError(f"Param must be 2-d, got shape {self.value.shape}")
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)  # momentum buffer / first moment
        self.v = np.zeros_like(self.value)  # second moment

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[:] = 0.0

    def copy(self) -> "Param":
        out = Param(self.value)
        out.grad = self.grad.copy()
        out.m = self.m.copy()
        out.v = self.v.copy()
        return out


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected 2-d array, got shape {x.shape}")
    return x


def linear(x, W: Param, b: Param | None = None):
    """y = x @ W.T + b with W of shape (out_dim, in_dim), b of shape (1, out_dim).

    Backward accumulates dW = g.T @ x and db = column sums of g, and
    returns dx = g @ W.
    """
    x = _as_matrix(x)
    if x.shape[1] != W.value.shape[1]:
        raise ValueError(
            f"linear: input dim {x.shape[1]} does not match weight dim {W.value.shape[1]}"
        )
    y = x @ W.value.T
    if b is not None:
        if b.value.shape != (1, W.value.shape[0]):
            raise ValueError(
                f"linear: bias shape {b.value.shape} does not match output dim {W.value.shape[0]}"
            )
        y = y + b.value

    def backward(g):
        g = np.asarray(g, dtype=np.float64)
        W.grad += g.T @ x
        if b is not None:
            b.grad += g.sum(axis=0, keepdims=True)
        return g @ W.value

    return y, backward


def mean_aggregate(feats, offsets, neighbors):
    """Per-seed mean of neighbor feature rows.

    Row i of the output is the mean of feats[neighbors[offsets[i]:offsets[i+1]]];
    seeds with zero neighbors get the zero vector.  Backward scatters
    g_i / deg(i) onto each contributing neighbor row.
    """
    feats = _as_matrix(feats)
    offsets = np.asarray(offsets, dtype=np.int64)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    n_seeds = len(offsets) - 1
    counts = np.diff(offsets)
    seed_of = np.repeat(np.arange(n_seeds), counts)
    out = np.zeros((n_seeds, feats.shape[1]))
    np.add.at(out, seed_of, feats[neighbors])
    nz = counts > 0
    out[nz] /= counts[nz, None]

    def backward(g):
        g = np.asarray(g, dtype=np.float64)
        dfeats = np.zeros_like(feats)
        np.add.at(dfeats, neighbors, g[seed_of] / counts[seed_of, None])
        return dfeats

    return out, backward


def relu(x):
    x = np.asarray(x, dtype=np.float64)
    y = np.maximum(x, 0.0)

    def backward(g):
        return np.asarray(g) * (x > 0.0)

    return y, backward


def concat(a, b):
    """Column-wise concatenation; backward splits the gradient back."""
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"concat: row counts differ ({a.shape[0]} vs {b.shape[0]})")
    y = np.concatenate([a, b], axis=1)
    split = a.shape[1]

    def backward(g):
        g = np.asarray(g)
        return g[:, :split], g[:, split:]

    return y, backward


def l2_normalize_rows(x, eps=1e-12):
    """Row-wise unit normalization; rows with zero norm pass through as zeros."""
    x = _as_matrix(x)
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    safe = np.maximum(norms, eps)
    y = x / safe

    def backward(g):
        g = np.asarray(g, dtype=np.float64)
        # d/dx (x/|x|) = (g - (g.y) y) / |x|, zero rows get zero gradient
        dot = (g * y).sum(axis=1, keepdims=True)
        out = (g - dot * y) / safe
        out[norms[:, 0] == 0.0] = 0.0
        return out

    return y, backward


def softmax(logits):
    logits = _as_matrix(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer class labels.

    Returns (loss, dlogits) with dlogits = (softmax - onehot) / N.
    Stabilized by max subtraction.
    """
    logits = _as_matrix(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if n == 0:
        raise ValueError("softmax_cross_entropy: empty batch")
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    loss = -log_p[rows, labels].mean()
    dlogits = np.exp(log_p)
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def mae_loss(pred, target):
    """Mean absolute error over an (n, 1) prediction column.

    Subgradient at exact equality is 0.
    """
    pred = _as_matrix(pred)
    if pred.shape[1] != 1:
        raise ValueError(f"mae_loss: pred must be (n, 1), got {pred.shape}")
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    n = pred.shape[0]
    if n == 0:
        raise ValueError("mae_loss: empty batch")
    if target.shape[0] != n:
        raise ValueError(f"target length {target.shape[0]} does not match batch size {n}")
    diff = pred[:, 0] - target
    loss = np.abs(diff).mean()
    dpred = (np.sign(diff) / n).reshape(n, 1)
    return loss, dpred


def bce_with_logits(logits, targets):
    """Mean per-element binary cross-entropy in stable log-sum-exp form."""
    logits = _as_matrix(logits)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    if logits.size == 0:
        raise ValueError("bce_with_logits: empty batch")
    z = logits
    # max(z, 0) - z*t + log(1 + exp(-|z|))
    loss_elems = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    loss = loss_elems.mean()
    dlogits = (sigmoid(z) - targets) / z.size
    return loss, dlogits


def sigmoid(x):
    """Overflow-safe logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
