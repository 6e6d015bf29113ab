"""Central-difference verification of tape gradients."""

from __future__ import annotations

import numpy as np

from .params import ParameterStore
from .tensor import Tape


def relative_error(analytic, numeric, floor=1e-5):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _central(f, store, flat, i, h, shrink=2):
    """Central difference at ``flat[i]``, kept inside one smooth piece.

    When the forward and backward one-sided slopes disagree by far more than
    curvature allows, the stencil straddles a relu kink; ``h`` shrinks by 100
    (at most ``shrink`` times) until it no longer does.
    """
    orig = flat[i]
    f0 = float(f(store.bind()).data)
    for _ in range(shrink + 1):
        flat[i] = orig + h
        fp = float(f(store.bind()).data)
        flat[i] = orig - h
        fm = float(f(store.bind()).data)
        flat[i] = orig
        central = (fp - fm) / (2.0 * h)
        fwd, bwd = (fp - f0) / h, (f0 - fm) / h
        if abs(fwd - bwd) <= 1e-2 * max(abs(fwd), abs(bwd), 1.0):
            break
        h /= 100.0
    return central


def grad_check(f, store: ParameterStore, h=1e-5, coords_per_entry=None, rng=None,
               floor=1e-5):
    """Worst relative error between tape and central-difference gradients.

    ``f(params)`` maps a dict of bound tensors to a scalar tensor. With
    ``coords_per_entry`` only that many randomly chosen coordinates of each
    entry are perturbed (``rng`` required); otherwise every coordinate is.
    """
    bound = store.bind()
    with Tape() as tape:
        out = f(bound)
    tape.backward(out)
    worst = 0.0
    for name, value in store.values.items():
        g = bound[name].grad
        analytic = np.zeros_like(value) if g is None else g
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if coords_per_entry is not None and flat.size > coords_per_entry:
            idx = rng.choice(flat.size, size=coords_per_entry, replace=False)
        for i in idx:
            numeric = _central(f, store, flat, i, h)
            worst = max(worst, relative_error(float(analytic.reshape(-1)[i]), numeric, floor))
    return worst
