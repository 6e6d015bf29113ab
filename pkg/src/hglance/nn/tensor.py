"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Operations record themselves on the innermost active :class:`Tape` (if any
input requires a gradient). Without an active tape they are plain numpy
computations, which is what rollouts use.
"""

from __future__ import annotations

import math
import threading

import numpy as np

from ..errors import EmptyInput, ShapeMismatch

_LOCAL = threading.local()
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records operations for one forward pass; ``backward`` replays them in reverse."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        stack = getattr(_LOCAL, "stack", None)
        if stack is None:
            stack = _LOCAL.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _LOCAL.stack.pop()
        return False

    def backward(self, root: Tensor, grad=None):
        root.grad = np.ones_like(root.data) if grad is None else np.asarray(grad, dtype=np.float64)
        self.backward_from()

    def backward_from(self):
        """Propagate whatever output gradients have already been seeded."""
        for out, parents, fn in reversed(self.nodes):
            if out.grad is None:
                continue
            for p, g in zip(parents, fn(out.grad)):
                if g is None or not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g


def current_tape():
    stack = getattr(_LOCAL, "stack", None)
    return stack[-1] if stack else None


def _emit(data, parents, backward) -> Tensor:
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.nodes.append((out, parents, backward))
    return out


def unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def scale(a, c: float):
    a = as_tensor(a)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def relu(x):
    x = as_tensor(x)
    on = x.data > 0
    return _emit(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    x = as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def activation(x, kind: str):
    try:
        fn = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def floor(x, lo: float):
    """``max(x, lo)``; gradient is cut where the floor is active."""
    x = as_tensor(x)
    live = x.data > lo
    return _emit(np.where(live, x.data, lo), (x,), lambda g: (g * live,))


# --------------------------------------------------------------------------
# structural


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def getitem(x, idx):
    x = as_tensor(x)

    def back(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _emit(x.data[idx], (x,), back)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)
    return _emit(np.stack([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def detach(x):
    return Tensor(as_tensor(x).data)


# --------------------------------------------------------------------------
# reductions and linear algebra


def total(x, axis=None):
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(x.data.sum(axis=axis), (x,), back)


def mean(x, axis):
    x = as_tensor(x)
    n = x.shape[axis]
    if n == 0:
        raise EmptyInput("mean over an empty axis")
    shape = x.shape
    return _emit(x.data.mean(axis=axis), (x,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),))


def mean_pool(x):
    """Column-wise mean of an ``[n, d]`` (or ``[..., n, d]``) tensor over rows."""
    x = as_tensor(x)
    if x.data.ndim < 2:
        raise ShapeMismatch(f"mean_pool expects [..., n, d], got {x.shape}")
    return mean(x, axis=-2)


def prefix_mean(x, axis=-2):
    """Row ``i`` is the mean of rows ``0..i`` along ``axis`` (inclusive)."""
    x = as_tensor(x)
    axis = axis % x.data.ndim
    n = x.shape[axis]
    if n == 0:
        raise EmptyInput("prefix mean of an empty sequence")
    cshape = [1] * x.data.ndim
    cshape[axis] = n
    counts = np.arange(1, n + 1, dtype=np.float64).reshape(cshape)

    def back(g):
        h = g / counts
        return (np.flip(np.cumsum(np.flip(h, axis), axis=axis), axis),)

    return _emit(np.cumsum(x.data, axis=axis) / counts, (x,), back)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _emit(a.data @ b.data, (a, b), back)


def linear(x, W, b):
    """``x @ W + b`` applied over the last axis of ``x``."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.data.ndim != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeMismatch(f"linear: x {x.shape}, W {W.shape}, b {b.shape}")
    d_in, d_out = W.shape

    def back(g):
        g2 = g.reshape(-1, d_out)
        return (g @ W.data.T,
                x.data.reshape(-1, d_in).T @ g2,
                g2.sum(axis=0))

    return _emit(x.data @ W.data + b.data, (x, W, b), back)


def rowwise_linear(x, W, b):
    """Per-row weights: ``out[..., k, :] = x[..., k, :] @ W[k] + b[k]``."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.data.ndim != 3 or x.shape[-2:] != W.shape[:2] or b.shape != (W.shape[0], W.shape[2]):
        raise ShapeMismatch(f"rowwise_linear: x {x.shape}, W {W.shape}, b {b.shape}")
    lead = x.data.ndim - 2

    def back(g):
        gx = np.einsum("...ko,kio->...ki", g, W.data)
        k, i = x.shape[-2:]
        gw = np.einsum("nki,nko->kio", x.data.reshape(-1, k, i), g.reshape(-1, k, g.shape[-1]))
        gb = g.sum(axis=tuple(range(lead))) if lead else g
        return gx, gw, gb

    return _emit(np.einsum("...ki,kio->...ko", x.data, W.data) + b.data, (x, W, b), back)


# --------------------------------------------------------------------------
# probability


def masked_softmax(x, mask, axis=-1):
    """Softmax over ``axis`` restricted to entries where ``mask`` is true.

    Every slice must contain at least one unmasked entry.
    """
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    shifted = np.where(mask, x.data, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Per-row ``-log softmax(logits)[label]`` over the last axis.

    ``labels`` is an integer array broadcastable to ``logits.shape[:-1]``.
    Returns ``(loss, probs)``; probabilities are plain arrays.
    """
    logits = as_tensor(logits)
    m = logits.shape[-1]
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), logits.shape[:-1])
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise ValueError(f"label outside [0, {m})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - log_norm
    probs = np.exp(logp)
    onehot = np.eye(m)[labels]
    loss = -(logp * onehot).sum(axis=-1)
    out = _emit(loss, (logits,), lambda g: ((probs - onehot) * g[..., None],))
    return out, probs


def softmax_cross_entropy(logits, label: int):
    """Loss and probabilities for a single logit vector and integer label."""
    loss, probs = cross_entropy(logits, np.int64(label))
    return loss, probs


def xi_mu_array(x, mu, sigma):
    return (x - mu) / (sigma * sigma)


def xi_sigma_array(x, mu, sigma):
    d = x - mu
    return (d * d - sigma * sigma) / (sigma * sigma * sigma)


def gaussian_logpdf(x, mu, sigma):
    """``log N(x; mu, sigma)`` with ``x`` held constant.

    The backward pass uses the closed-form score functions in ``mu`` and ``sigma``.
    """
    x = as_tensor(x).data
    mu, sigma = as_tensor(mu), as_tensor(sigma)
    d = x - mu.data
    val = -LOG_SQRT_2PI - np.log(sigma.data) - d * d / (2.0 * sigma.data * sigma.data)

    def back(g):
        return (g * xi_mu_array(x, mu.data, sigma.data),
                g * xi_sigma_array(x, mu.data, sigma.data))

    return _emit(val, (mu, sigma), back)
