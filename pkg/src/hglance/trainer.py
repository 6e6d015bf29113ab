"""REINFORCE training with the hybrid policy-gradient + cross-entropy update."""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, sim
from .config import TrainConfig
from .errors import NonFiniteGradient
from .locnet import N_COMPONENTS
from .model import HapticModel, RolloutBatch
from .nn import Tape, adam_step, checkpoint, sgd_step
from .nn.tensor import cross_entropy, mul, scale, sub, total

log = logging.getLogger(__name__)

METRICS_HEADER = ["step", "episodes", "probe", "accuracy", "mean_reward", "mean_sigma_py",
                  "mean_sigma_ux", "mean_sigma_uy", "mean_sigma_uz", "clip_rate"]
_TRAIN_STREAM = 2
_EVAL_STREAM = 3
_SPLIT_CODE = {"train": 0, "test": 1}


def thread_count() -> int:
    """Rollout/backward worker threads from ``HGLANCE_THREADS`` (0 = single-threaded)."""
    raw = os.environ.get("HGLANCE_THREADS", "0").strip() or "0"
    return max(0, int(raw))


def _map(fn, items, threads):
    if threads <= 0 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# returns and single-episode records


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """``G_k = sum_{j=k+1}^{N} gamma**(j-k+1) * r_j`` (1-based), so ``G_N = 0``."""
    r = [float(x) for x in rewards]
    n = len(r)
    out = np.zeros(n)
    for k in range(n):
        acc = 0.0
        for j in range(k + 1, n):
            acc += gamma ** (j - k + 1) * r[j]
        out[k] = acc
    return out


def advantage_targets(rewards, gamma, mode):
    """Per-step quantity the baseline regresses on and the advantage subtracts from."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if mode == "reward":
        return rewards.copy()
    if mode == "return":
        return np.stack([discounted_returns(r, gamma) for r in rewards.reshape(-1, rewards.shape[-1])]
                        ).reshape(rewards.shape)
    raise ValueError(f"unknown advantage mode {mode!r}")


@dataclass
class Trajectory:
    scene: sim.Scene
    label: int
    requests: np.ndarray
    points: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    raw: np.ndarray
    actions: np.ndarray
    probs: np.ndarray
    rewards: np.ndarray
    returns: np.ndarray
    baselines: np.ndarray

    @property
    def onehot(self):
        y = np.zeros(self.probs.shape[-1])
        y[self.label] = 1.0
        return y


def trajectories(batch: RolloutBatch, gamma: float) -> list[Trajectory]:
    return [Trajectory(batch.scenes[i], int(batch.labels[i]), batch.requests[i], batch.points[i],
                       batch.mu[i], batch.sigma[i], batch.raw[i], batch.actions[i], batch.probs[i],
                       batch.rewards[i], discounted_returns(batch.rewards[i], gamma),
                       batch.baselines[i])
            for i in range(len(batch))]


def rollout(scene, model: HapticModel, rng: np.random.Generator, greedy=False) -> Trajectory:
    """One episode in ``scene``; the policy noise is drawn from ``rng``."""
    noise = rng.standard_normal((1, model.cfg.n_probes, N_COMPONENTS))
    return trajectories(model.rollout([scene], noise, greedy), model.cfg.gamma)[0]


# --------------------------------------------------------------------------
# episodes


def episode_inputs(cfg: TrainConfig, stream, key, index, split):
    rng = np.random.default_rng([cfg.seed, stream, key, index])
    scene = sim.sample_scene(rng, split, cfg.sim())
    noise = rng.standard_normal((cfg.n_probes, N_COMPONENTS))
    return scene, noise


def run_episodes(model: HapticModel, scenes, noise, threads=0, greedy=False) -> RolloutBatch:
    """Roll out in fixed-size chunks; chunking never depends on the thread count."""
    size = model.cfg.chunk
    spans = [(i, min(i + size, len(scenes))) for i in range(0, len(scenes), size)]
    parts = _map(lambda s: model.rollout(scenes[s[0]:s[1]], noise[s[0]:s[1]], greedy),
                 spans, threads)
    return RolloutBatch.concat(parts)


# --------------------------------------------------------------------------
# update


def chunk_loss(model: HapticModel, P, part: RolloutBatch, weight: float):
    """Hybrid objective for a slice of the batch, scaled by ``weight``."""
    cfg = model.cfg
    f = model.forward(P, part.requests, part.points, part.actions, part.raw)
    ce, _ = cross_entropy(f["logits"], part.labels[:, None])
    target = advantage_targets(part.rewards, cfg.gamma, cfg.advantage)
    advantage = target - f["baseline"].data
    policy = scale(total(mul(advantage, f["logp"])), -cfg.beta)
    resid = sub(f["baseline"], target)
    base = scale(total(mul(resid, resid)), 0.5 * cfg.baseline_weight)
    loss = scale(total(ce) + policy + base, weight)
    return loss


def _chunk_grads(model, part, weight):
    P = model.store.bind()
    with Tape() as tape:
        loss = chunk_loss(model, P, part, weight)
    tape.backward(loss)
    return float(loss.data), {k: t.grad for k, t in P.items() if t.grad is not None}


def split_batch(batch: RolloutBatch, size: int):
    out = []
    for lo in range(0, len(batch), size):
        hi = min(lo + size, len(batch))
        out.append(RolloutBatch(batch.scenes[lo:hi], *(getattr(batch, n)[lo:hi] for n in (
            "labels", "requests", "points", "mu", "sigma", "raw", "actions", "probs",
            "rewards", "baselines"))))
    return out


def compute_gradients(model: HapticModel, batch: RolloutBatch, threads=0) -> float:
    """Zero and refill the store's gradients for ``batch``; returns the loss."""
    store = model.store
    store.zero_grad()
    parts = split_batch(batch, model.cfg.chunk)
    weight = 1.0 / len(batch)
    results = _map(lambda p: _chunk_grads(model, p, weight), parts, threads)
    loss = 0.0
    for part_loss, grads in results:  # fixed order keeps the sum bitwise stable
        loss += part_loss
        for k, g in grads.items():
            store.grads[k] += g
    return loss


def hybrid_update(model: HapticModel, batch: RolloutBatch, threads=0, step=None) -> float:
    loss = compute_gradients(model, batch, threads)
    bad = model.store.check_finite()
    if bad is not None:
        raise NonFiniteGradient(bad, step)
    if model.cfg.optimizer == "adam":
        adam_step(model.store, model.cfg.alpha)
    else:
        sgd_step(model.store, model.cfg.alpha)
    return loss


# --------------------------------------------------------------------------
# metrics and checkpoints


def batch_metrics(step: int, episodes: int, batch: RolloutBatch) -> dict:
    acc = batch.rewards.mean(axis=0)
    sig = batch.sigma.reshape(-1, N_COMPONENTS).mean(axis=0)
    return {
        "step": step,
        "episodes": episodes,
        "probe": batch.rewards.shape[1],
        "accuracy": ";".join(f"{a:.6f}" for a in acc),
        "mean_reward": f"{batch.rewards.mean():.6f}",
        "mean_sigma_py": f"{sig[0]:.6f}",
        "mean_sigma_ux": f"{sig[1]:.6f}",
        "mean_sigma_uy": f"{sig[2]:.6f}",
        "mean_sigma_uz": f"{sig[3]:.6f}",
        "clip_rate": f"{np.mean(batch.raw != batch.actions):.6f}",
    }


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRICS_HEADER, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["accuracy"] = [float(a) for a in row["accuracy"].split(";")]
    return rows


def save_model(path, model: HapticModel, step: int):
    meta = {"config": model.cfg.as_dict(), "step": step, "version": __version__}
    checkpoint.save(path, model.store, meta)


def load_model(path) -> tuple[HapticModel, dict]:
    store, meta = checkpoint.load(path)
    cfg = TrainConfig(**meta["config"])
    return HapticModel(cfg, store), meta


# --------------------------------------------------------------------------
# training and evaluation


def train(cfg: TrainConfig, out_dir=None, threads=None, on_step=None):
    """Train for ``cfg.steps`` steps. Returns ``(model, metrics rows)``.

    With ``out_dir`` the metrics CSV and checkpoints are written there
    (every ``checkpoint_every`` steps and at the end).
    """
    threads = thread_count() if threads is None else threads
    model = HapticModel(cfg)
    rows = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    for step in range(cfg.steps):
        inputs = [episode_inputs(cfg, _TRAIN_STREAM, step, e, "train") for e in range(cfg.batch)]
        scenes = [s for s, _ in inputs]
        noise = np.stack([n for _, n in inputs])
        batch = run_episodes(model, scenes, noise, threads)
        hybrid_update(model, batch, threads, step=step)
        rows.append(batch_metrics(step + 1, (step + 1) * cfg.batch, batch))
        if on_step is not None:
            on_step(step + 1, batch)
        if out is not None and (step + 1) % cfg.checkpoint_every == 0:
            save_model(out / "checkpoints" / f"step_{step + 1:06d}.hglc", model, step + 1)
            checkpoint.atomic_write(out / "metrics.csv", metrics_csv(rows).encode())
    if out is not None:
        save_model(out / "checkpoint.hglc", model, cfg.steps)
        checkpoint.atomic_write(out / "metrics.csv", metrics_csv(rows).encode())
    return model, rows


def evaluate_batch(model: HapticModel, episodes: int, split="test", seed=None, threads=None,
                   greedy=False) -> RolloutBatch:
    cfg = model.cfg if seed is None else model.cfg.replace(seed=seed)
    threads = thread_count() if threads is None else threads
    inputs = [episode_inputs(cfg, _EVAL_STREAM, _SPLIT_CODE[split], e, split)
              for e in range(episodes)]
    scenes = [s for s, _ in inputs]
    noise = np.stack([n for _, n in inputs]) if inputs else np.zeros((0, cfg.n_probes, 4))
    return run_episodes(model, scenes, noise, threads, greedy)


def evaluate(model: HapticModel, episodes: int, split="test", seed=None, threads=None,
             greedy=False) -> np.ndarray:
    """Per-probe accuracy over ``episodes`` held-out (or training-range) scenes."""
    return evaluate_batch(model, episodes, split, seed, threads, greedy).rewards.mean(axis=0)
