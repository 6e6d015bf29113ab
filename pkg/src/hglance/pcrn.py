"""Point-sequence representation network.

Each of the two input sequences (probe requests and collected points) passes
through a per-point context-aware block: a shared per-point MLP, a causal
self-attention aggregation over the points collected so far, and a second MLP
over ``feature ⊕ context``. The two block outputs are fused row by row into
the mutual representation. Row ``i`` only ever sees rows ``0..i``.

All functions accept ``[N, 4]`` or batched ``[B, N, 4]`` inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyInput, ShapeMismatch
from .nn import MLP
from .nn.tensor import (add, as_tensor, concat, getitem, linear, masked_softmax, matmul,
                        prefix_mean, relu, reshape)

SEQ_WIDTH = 4


def causal_mask(n: int) -> np.ndarray:
    """``mask[i, j]`` is true when point ``j`` may inform target row ``i``."""
    return np.tril(np.ones((n, n), dtype=bool))


def ca_context(f):
    """Inclusive prefix mean over the sequence axis."""
    f = as_tensor(f)
    if f.data.ndim < 2 or f.shape[-2] == 0:
        raise EmptyInput("context of an empty sequence")
    return prefix_mean(f, axis=-2)


class P2CARB:
    def __init__(self, store, prefix, d_in, d_feat, attn_hidden, rng):
        self.prefix = prefix
        self.d_feat = d_feat
        self.feat = MLP(store, prefix + ".feat", d_in, d_feat, d_feat, rng)
        self.attn = MLP(store, prefix + ".attn", 2 * d_feat, attn_hidden, 1, rng)
        self.out = MLP(store, prefix + ".out", 2 * d_feat, d_feat, d_feat, rng)

    def point_features(self, P, seq):
        seq = as_tensor(seq)
        if seq.data.ndim < 2 or seq.shape[-1] != self.feat.d_in:
            raise ShapeMismatch(f"expected [..., N, {self.feat.d_in}], got {seq.shape}")
        if seq.shape[-2] == 0:
            raise EmptyInput("empty sequence")
        return self.feat(P, seq)

    def attention_scores(self, P, f, c):
        """``scores[..., i, j] = MLP_a(f_j ⊕ c_i)``, expanded without materialising the concat."""
        d = self.d_feat
        p = self.attn.prefix
        w1 = P[p + ".l1.w"]
        w_feat = getitem(as_tensor(w1), np.s_[:d])
        w_ctx = getitem(as_tensor(w1), np.s_[d:])
        n = f.shape[-2]
        lead = f.shape[:-2]
        from_source = matmul(f, w_feat)  # [..., N(j), h]
        from_target = linear(c, w_ctx, P[p + ".l1.b"])  # [..., N(i), h]
        hdim = from_source.shape[-1]
        pair = add(reshape(from_source, lead + (1, n, hdim)),
                   reshape(from_target, lead + (n, 1, hdim)))
        hidden = relu(pair)
        score = linear(hidden, P[p + ".l2.w"], P[p + ".l2.b"])
        return reshape(score, lead + (n, n))

    def saca_context(self, P, f):
        f = as_tensor(f)
        c = ca_context(f)
        weights = masked_softmax(self.attention_scores(P, f, c), causal_mask(f.shape[-2]))
        return matmul(weights, f)

    def __call__(self, P, seq):
        f = self.point_features(P, seq)
        return self.out(P, concat([f, self.saca_context(P, f)], axis=-1))


class PCRN:
    def __init__(self, store, rng, d_feat=64, d_rep=64, attn_hidden=64):
        self.d_rep = d_rep
        self.requests = P2CARB(store, "pcrn.req", SEQ_WIDTH, d_feat, attn_hidden, rng)
        self.points = P2CARB(store, "pcrn.pts", SEQ_WIDTH, d_feat, attn_hidden, rng)
        self.fuse = MLP(store, "pcrn.fuse", 2 * d_feat, d_rep, d_rep, rng)

    def __call__(self, P, s_r, s_c):
        """Mutual representation ``[..., N, d_rep]`` of aligned request/point sequences."""
        s_r, s_c = as_tensor(s_r), as_tensor(s_c)
        if s_r.shape != s_c.shape:
            raise ShapeMismatch(f"request {s_r.shape} and point {s_c.shape} sequences differ")
        return self.fuse(P, concat([self.requests(P, s_r), self.points(P, s_c)], axis=-1))

    mutual_representation = __call__
