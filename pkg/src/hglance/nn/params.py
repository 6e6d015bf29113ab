"""Named parameters with gradient buffers, initialisation and optimisers."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Ordered collection of named float64 arrays with paired gradients.

    Optimiser moment buffers live here too so that they travel with
    checkpoints.
    """

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.adam_t = 0

    def __contains__(self, name):
        return name in self.values

    def __len__(self):
        return len(self.values)

    def names(self):
        return list(self.values)

    def add(self, name: str, value) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def dense(self, prefix: str, d_in: int, d_out: int, rng: np.random.Generator,
              zero_weight=False):
        """Glorot-uniform weight ``prefix.w`` and zero bias ``prefix.b``."""
        if zero_weight:
            w = np.zeros((d_in, d_out))
        else:
            lim = math.sqrt(6.0 / (d_in + d_out))
            w = rng.uniform(-lim, lim, size=(d_in, d_out))
        self.add(prefix + ".w", w)
        self.add(prefix + ".b", np.zeros(d_out))

    def size(self):
        return sum(v.size for v in self.values.values())

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def bind(self) -> dict[str, Tensor]:
        """Fresh leaf tensors (sharing storage with the store) for one forward pass."""
        return {k: Tensor(v, requires_grad=True) for k, v in self.values.items()}

    def accumulate(self, bound: dict[str, Tensor], weight: float = 1.0):
        for k, t in bound.items():
            if t.grad is not None:
                self.grads[k] += weight * t.grad if weight != 1.0 else t.grad

    def check_finite(self):
        """Name of the first entry with a non-finite gradient, or None."""
        for k, g in self.grads.items():
            if not np.all(np.isfinite(g)):
                return k
        return None

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        for k, v in self.values.items():
            other.add(k, v.copy())
            other.grads[k][...] = self.grads[k]
        other.moments = {k: (m.copy(), v.copy()) for k, (m, v) in self.moments.items()}
        other.adam_t = self.adam_t
        return other


def adam_step(store: ParameterStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    store.adam_t += 1
    t = store.adam_t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, value in store.values.items():
        g = store.grads[name]
        if name not in store.moments:
            store.moments[name] = (np.zeros_like(value), np.zeros_like(value))
        m, v = store.moments[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def sgd_step(store: ParameterStore, lr: float):
    for name, value in store.values.items():
        value -= lr * store.grads[name]
