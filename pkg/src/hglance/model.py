"""The full agent: representation network, policy, classifier and baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sim
from .classifier import build_classifier, predictions
from .config import N_MAX, TrainConfig
from .locnet import LocationNet, conditioning
from .nn import MLP, ParameterStore
from .nn.tensor import detach, reshape, softmax
from .pcrn import PCRN

BASELINE_HIDDEN = 32


@dataclass
class RolloutBatch:
    """Arrays for ``B`` episodes of ``N`` probes each."""

    scenes: list
    labels: np.ndarray  # [B]
    requests: np.ndarray  # [B, N, 4] (Py, Ux, Uy, Uz)
    points: np.ndarray  # [B, N, 4] (X, Y, Z, T)
    mu: np.ndarray  # [B, N, 4]
    sigma: np.ndarray  # [B, N, 4]
    raw: np.ndarray  # [B, N, 4] unclipped samples
    actions: np.ndarray  # [B, N, 4] clipped to [-1, 1]
    probs: np.ndarray  # [B, N, M]
    rewards: np.ndarray  # [B, N]
    baselines: np.ndarray  # [B, N]

    def __len__(self):
        return len(self.scenes)

    @classmethod
    def concat(cls, parts):
        return cls(scenes=[s for p in parts for s in p.scenes],
                   **{name: np.concatenate([getattr(p, name) for p in parts])
                      for name in ("labels", "requests", "points", "mu", "sigma", "raw",
                                   "actions", "probs", "rewards", "baselines")})


class HapticModel:
    def __init__(self, cfg: TrainConfig, store: ParameterStore | None = None):
        self.cfg = cfg
        fresh = ParameterStore()
        rng = np.random.default_rng([cfg.seed, 1])
        self.pcrn = PCRN(fresh, rng, cfg.d_feat, cfg.d_rep, cfg.attn_hidden)
        self.locnet = LocationNet(fresh, rng, cfg.d_rep, cfg.loc_hidden, cfg.sigma_min,
                                  init_mu=(0.0, 0.0, 0.0, cfg.init_uz),
                                  init_sigma=cfg.init_sigma)
        self.classifier = build_classifier(cfg.variant, fresh, rng, cfg.d_rep, N_MAX)
        self.baseline = MLP(fresh, "baseline", cfg.d_rep, BASELINE_HIDDEN, 1, rng)
        if store is None:
            store = fresh
        else:
            expected = {k: v.shape for k, v in fresh.values.items()}
            got = {k: v.shape for k, v in store.values.items()}
            if expected != got:
                missing = sorted(set(expected) ^ set(got))
                raise ValueError(f"checkpoint does not match the architecture: {missing[:5]}")
        self.store = store
        self.sim = cfg.sim()

    # -- forward pieces -----------------------------------------------------

    def representation(self, P, requests, points):
        return self.pcrn(P, requests, points)

    def forward(self, P, requests, points, actions, raw):
        """Everything the update needs, as tensors over ``[..., N]``."""
        rep = self.pcrn(P, requests, points)
        cond = conditioning(rep)
        logits = self.classifier.logits(P, rep)
        logp, mu, sigma = self.locnet.log_prob(P, cond, actions, raw)
        base = self.baseline(P, detach(cond))
        return {"rep": rep, "cond": cond, "logits": logits, "logp": logp, "mu": mu,
                "sigma": sigma, "baseline": reshape(base, base.shape[:-1])}

    # -- rollouts -----------------------------------------------------------

    def rollout(self, scenes, noise, greedy=False) -> RolloutBatch:
        """Run every episode in ``scenes`` for ``N`` probes with the given standard-normal noise.

        ``noise`` is ``[B, N, 4]``; all computation is tape-free.
        """
        V = self.store.values
        n = self.cfg.n_probes
        b = len(scenes)
        requests = np.zeros((b, n, 4))
        points = np.zeros((b, n, 4))
        out = {k: np.zeros((b, n, 4)) for k in ("mu", "sigma", "raw", "actions")}
        for k in range(n):
            if k == 0:
                cond = np.zeros((b, self.cfg.d_rep))
            else:
                rep = self.pcrn(V, requests[:, :k], points[:, :k]).data
                cond = rep.mean(axis=1)
            step = self.locnet.sample(V, cond, noise[:, k], greedy=greedy)
            py, u = sim.actions_to_directions(step["action"], self.sim)
            requests[:, k, 0] = py
            requests[:, k, 1:] = u
            points[:, k] = sim.ray_cast_batch(scenes, py, u, self.sim)
            out["mu"][:, k] = step["mu"]
            out["sigma"][:, k] = step["sigma"]
            out["raw"][:, k] = step["raw"]
            out["actions"][:, k] = step["action"]
        rep = self.pcrn(V, requests, points)
        probs = softmax(self.classifier.logits(V, rep).data)
        labels = np.array([s.object_id for s in scenes], dtype=np.int64)
        rewards = (predictions(probs) == labels[:, None]).astype(np.float64)
        baselines = self.baseline(V, conditioning(rep)).data[..., 0]
        return RolloutBatch(list(scenes), labels, requests, points, out["mu"], out["sigma"],
                            out["raw"], out["actions"], probs, rewards, baselines)
