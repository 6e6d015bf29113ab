"""Per-probe object classifiers over the mutual representation.

``FCClassifier`` pools every probe so far and applies one shared head.
``NClassClassifier`` owns one head per probe index; a one-hot probe mask
restricts head ``k`` to row ``k`` of the representation.
"""

from __future__ import annotations

import numpy as np

from .errors import IndexOutOfRange
from .nn import MLP
from .nn.tensor import as_tensor, matmul, prefix_mean, relu, rowwise_linear, softmax, stack

NUM_CLASSES = 4


def probe_mask(n: int, k: int) -> np.ndarray:
    """One-hot vector of length ``n`` selecting probe ``k`` (1-based)."""
    if not 1 <= k <= n:
        raise IndexOutOfRange(f"probe {k} outside [1, {n}]")
    mask = np.zeros(n)
    mask[k - 1] = 1.0
    return mask


def _rows(rep):
    rep = np.asarray(rep.data if hasattr(rep, "data") else rep, dtype=np.float64)
    return rep.reshape(-1, rep.shape[-1])


class FCClassifier:
    def __init__(self, store, rng, d_rep=64, hidden=32, n_classes=NUM_CLASSES):
        self.mlp = MLP(store, "clf.fc", d_rep, hidden, n_classes, rng, zero_last=True)

    def logits(self, P, rep):
        """Logits ``[..., N, M]``; row ``k`` classifies from probes ``0..k``."""
        return self.mlp(P, prefix_mean(rep, axis=-2))

    def classify(self, P, rep, k: int) -> np.ndarray:
        rows = _rows(rep)
        if not 1 <= k <= len(rows):
            raise IndexOutOfRange(f"probe {k} outside [1, {len(rows)}]")
        pooled = rows[:k].mean(axis=0)
        return softmax(self.mlp(P, pooled).data)


class NClassClassifier:
    def __init__(self, store, rng, d_rep=64, hidden=16, n_max=10, n_classes=NUM_CLASSES):
        self.n_max = n_max
        self.heads = [MLP(store, f"clf.n.{k}", d_rep, hidden, n_classes, rng, zero_last=True)
                      for k in range(1, n_max + 1)]

    def _stacked(self, P, n, layer):
        heads = self.heads[:n]
        w = stack([as_tensor(P[h.prefix + f".{layer}.w"]) for h in heads])
        b = stack([as_tensor(P[h.prefix + f".{layer}.b"]) for h in heads])
        return w, b

    def logits(self, P, rep):
        """Logits ``[..., N, M]``; row ``k`` comes from head ``k`` applied to row ``k`` only.

        Stacking the N probe masks gives the identity, so the masked selection
        reduces to feeding each row to its own head.
        """
        n = rep.shape[-2]
        if n > self.n_max:
            raise IndexOutOfRange(f"{n} probes but only {self.n_max} heads")
        w1, b1 = self._stacked(P, n, "l1")
        w2, b2 = self._stacked(P, n, "l2")
        return rowwise_linear(relu(rowwise_linear(rep, w1, b1)), w2, b2)

    def classify(self, P, rep, k: int) -> np.ndarray:
        rows = _rows(rep)
        if not 1 <= k <= self.n_max:
            raise IndexOutOfRange(f"no head for probe {k}")
        selected = matmul(probe_mask(len(rows), k)[None], rows)  # [1, d_rep]
        return softmax(self.heads[k - 1](P, selected).data[0])


def build_classifier(variant, store, rng, d_rep, n_max):
    if variant == "fc":
        return FCClassifier(store, rng, d_rep)
    if variant == "nclass":
        return NClassClassifier(store, rng, d_rep, n_max=n_max)
    raise ValueError(f"unknown classifier variant {variant!r}")


def predictions(probs) -> np.ndarray:
    """Arg-max class; ties resolve to the lowest index."""
    return np.argmax(probs, axis=-1)
