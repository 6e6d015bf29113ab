"""Autoregressive Gaussian probe policy.

The next probe request is emitted one component at a time in the fixed order
Py, Ux, Uy, Uz. Each component's head sees the mean-pooled representation of
the completed probes plus the already-fixed components; slots that are not
yet fixed are zeroed and flagged invalid by a parallel 0/1 mask.
"""

from __future__ import annotations

import numpy as np

from .errors import OrderViolation, SigmaTooSmall
from .nn.tensor import (as_tensor, concat, floor, gaussian_logpdf, getitem, linear, prefix_mean,
                        relu, reshape, sigmoid, tanh, total)

COMPONENTS = ("py", "ux", "uy", "uz")
N_COMPONENTS = len(COMPONENTS)
SIGMA_MIN = 0.01


def component_index(c) -> int:
    if isinstance(c, str):
        return COMPONENTS.index(c.lower())
    c = int(c)
    if not 0 <= c < N_COMPONENTS:
        raise ValueError(f"component index {c} outside [0, {N_COMPONENTS})")
    return c


def validity_mask(c: int) -> np.ndarray:
    return (np.arange(N_COMPONENTS) < c).astype(np.float64)


def xi_mu(x, mu, sigma, sigma_min=SIGMA_MIN):
    """Score of a Gaussian log-density with respect to its mean."""
    if sigma < sigma_min:
        raise SigmaTooSmall(f"sigma {sigma} below {sigma_min}")
    return (x - mu) / sigma ** 2


def xi_sigma(x, mu, sigma, sigma_min=SIGMA_MIN):
    """Score of a Gaussian log-density with respect to its standard deviation."""
    if sigma < sigma_min:
        raise SigmaTooSmall(f"sigma {sigma} below {sigma_min}")
    return ((x - mu) ** 2 - sigma ** 2) / sigma ** 3


def pooled(rep_prefix, d_rep):
    """Mean of the completed probes' rows; the zero vector before the first probe."""
    rep = np.asarray(rep_prefix, dtype=np.float64).reshape(-1, d_rep)
    return rep.mean(axis=0) if len(rep) else np.zeros(d_rep)


def conditioning(rep):
    """Exclusive prefix mean: row ``k`` pools rows ``0..k-1`` (zeros for ``k = 0``)."""
    rep = as_tensor(rep)
    n, d = rep.shape[-2], rep.shape[-1]
    lead = rep.shape[:-2]
    zero = np.zeros(lead + (1, d))
    if n == 1:
        return as_tensor(zero)
    head = getitem(prefix_mean(rep, axis=-2), (Ellipsis, slice(0, n - 1), slice(None)))
    return concat([zero, head], axis=-2)


class LocationNet:
    """Autoregressive Gaussian policy over ``(Py, Ux, Uy, Uz)``.

    By default every layer is Glorot with zero biases. Passing ``init_mu``
    (four means in (-1, 1)) and ``init_sigma`` instead zeroes the mu/sigma
    output weights and sets their biases so the untrained policy is the same
    Gaussian for every input; the shared trunk then cannot drag the initial
    probes around before the policy gradient has anything to say.
    """

    def __init__(self, store, rng, d_rep=64, hidden=64, sigma_min=SIGMA_MIN,
                 init_mu=None, init_sigma=None):
        self.d_rep = d_rep
        self.sigma_min = sigma_min
        fixed = init_mu is not None or init_sigma is not None
        mu0 = np.zeros(N_COMPONENTS) if init_mu is None else np.asarray(init_mu, dtype=float)
        sigma0 = 0.5 if init_sigma is None else float(init_sigma)
        if fixed and not (np.all(np.abs(mu0) < 1) and sigma_min < sigma0 < 1):
            raise ValueError("init_mu must lie in (-1, 1) and init_sigma in (sigma_min, 1)")
        for c, name in enumerate(COMPONENTS):
            p = "locnet." + name
            store.dense(p + ".fuse", d_rep + 2 * N_COMPONENTS, hidden, rng)
            store.dense(p + ".mu", hidden, 1, rng, zero_weight=fixed)
            store.dense(p + ".sigma", hidden, 1, rng, zero_weight=fixed)
            if fixed:
                store.values[p + ".mu.b"][:] = np.arctanh(mu0[c])
                store.values[p + ".sigma.b"][:] = np.log(sigma0 / (1.0 - sigma0))

    @staticmethod
    def masked_input(cond, partial, c: int):
        """``cond ⊕ (partial * mask) ⊕ mask`` over the last axis."""
        cond = as_tensor(cond)
        mask = validity_mask(c)
        part = np.where(mask > 0, np.asarray(partial, dtype=np.float64), 0.0)
        part = np.broadcast_to(part, cond.shape[:-1] + (N_COMPONENTS,))
        return concat([cond, part, np.broadcast_to(mask, part.shape)], axis=-1)

    def head(self, P, inp, c: int):
        p = "locnet." + COMPONENTS[c]
        h = relu(linear(inp, P[p + ".fuse.w"], P[p + ".fuse.b"]))
        mu = tanh(linear(h, P[p + ".mu.w"], P[p + ".mu.b"]))
        sigma = floor(sigmoid(linear(h, P[p + ".sigma.w"], P[p + ".sigma.b"])), self.sigma_min)
        lead = mu.shape[:-1]
        return reshape(mu, lead), reshape(sigma, lead)

    def predict_params(self, P, rep_prefix, partial_action, c):
        """``(mu, sigma)`` for component ``c`` of the next probe of one episode."""
        c = component_index(c)
        part = _check_partial(partial_action, c)
        inp = self.masked_input(pooled(rep_prefix, self.d_rep), part, c)
        mu, sigma = self.head(P, inp, c)
        return float(mu.data), float(sigma.data)

    def sample(self, P, cond, noise, greedy=False):
        """Draw a batch of actions component by component.

        ``cond`` is ``[B, d_rep]`` and ``noise`` ``[B, 4]`` standard normals.
        Returns a dict of ``[B, 4]`` arrays: ``mu``, ``sigma``, ``raw`` (the
        unclipped Gaussian sample) and ``action`` (clipped to [-1, 1]).
        """
        cond = np.asarray(cond, dtype=np.float64)
        noise = np.asarray(noise, dtype=np.float64)
        b = cond.shape[0]
        mu = np.zeros((b, N_COMPONENTS))
        sigma = np.zeros((b, N_COMPONENTS))
        raw = np.zeros((b, N_COMPONENTS))
        action = np.zeros((b, N_COMPONENTS))
        for c in range(N_COMPONENTS):
            m, s = self.head(P, self.masked_input(cond, action, c), c)
            mu[:, c], sigma[:, c] = m.data, s.data
            raw[:, c] = m.data if greedy else m.data + s.data * noise[:, c]
            action[:, c] = np.clip(raw[:, c], -1.0, 1.0)
        return {"mu": mu, "sigma": sigma, "raw": raw, "action": action}

    def sample_action(self, P, rep_prefix, rng: np.random.Generator, greedy=False):
        cond = pooled(rep_prefix, self.d_rep)[None]
        out = self.sample(P, cond, rng.standard_normal((1, N_COMPONENTS)), greedy)
        return {k: v[0] for k, v in out.items()}

    def distribution(self, P, cond, actions):
        """Per-component ``(mu, sigma)`` tensors ``[..., 4]`` given the executed actions."""
        mus, sigmas = [], []
        for c in range(N_COMPONENTS):
            m, s = self.head(P, self.masked_input(cond, actions, c), c)
            mus.append(reshape(m, m.shape + (1,)))
            sigmas.append(reshape(s, s.shape + (1,)))
        return concat(mus, axis=-1), concat(sigmas, axis=-1)

    def log_prob(self, P, cond, actions, raw):
        """Summed Gaussian log-density of the raw samples, per step ``[...]``."""
        mu, sigma = self.distribution(P, cond, actions)
        return total(gaussian_logpdf(raw, mu, sigma), axis=-1), mu, sigma


def _check_partial(partial, c):
    vals = [None if v is None else float(v) for v in partial]
    if len(vals) < N_COMPONENTS:
        if len(vals) != c:
            raise OrderViolation(
                f"component {COMPONENTS[c]} expects exactly {c} fixed components, got {len(vals)}")
        vals += [0.0] * (N_COMPONENTS - len(vals))
    elif len(vals) > N_COMPONENTS:
        raise OrderViolation("more than four components")
    for i in range(c):
        if vals[i] is None or not np.isfinite(vals[i]):
            raise OrderViolation(f"component {COMPONENTS[i]} must be fixed before {COMPONENTS[c]}")
    return np.array([0.0 if v is None else v for v in vals])
