"""Shared two-layer perceptron."""

from .tensor import linear, relu


class MLP:
    """``linear -> relu -> linear`` with weights registered under ``prefix``.

    Called with a parameter mapping: bound tensors during training, or the
    store's raw arrays for tape-free inference.
    """

    def __init__(self, store, prefix, d_in, d_hidden, d_out, rng, zero_last=False):
        self.prefix = prefix
        self.d_in, self.d_out = d_in, d_out
        store.dense(prefix + ".l1", d_in, d_hidden, rng)
        store.dense(prefix + ".l2", d_hidden, d_out, rng, zero_weight=zero_last)

    def hidden(self, P, x):
        p = self.prefix
        return relu(linear(x, P[p + ".l1.w"], P[p + ".l1.b"]))

    def __call__(self, P, x):
        p = self.prefix
        return linear(self.hidden(P, x), P[p + ".l2.w"], P[p + ".l2.b"])
