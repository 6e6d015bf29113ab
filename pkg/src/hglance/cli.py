"""``hglance`` command line: ``train``, ``eval`` and ``dump-episode``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, kernels, sim, trainer
from .classifier import predictions
from .config import parse_config
from .errors import ConfigError, HGlanceError
from .locnet import N_COMPONENTS
from .nn.checkpoint import atomic_write

log = logging.getLogger("hglance")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    """Bad paths or option combinations; reported with the config exit code."""


# --------------------------------------------------------------------------
# report tables


def report_rows(accuracy, first=2):
    """``(probe, accuracy)`` pairs from probe ``first`` onwards (1-based)."""
    return [(k, float(a)) for k, a in enumerate(accuracy, 1) if k >= first]


def render_table(rows, variant, split, episodes) -> str:
    lines = [f"variant {variant}  split {split}  episodes {episodes}",
             f"{'probe':>5}  {'accuracy':>8}"]
    lines += [f"{k:>5}  {a:>8.4f}" for k, a in rows]
    return "\n".join(lines) + "\n"


def report_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["probe", "accuracy"])
    writer.writerows((k, f"{a:.6f}") for k, a in rows)
    return buf.getvalue()


def read_report(path):
    with open(path, newline="") as fh:
        return [(int(r["probe"]), float(r["accuracy"])) for r in csv.DictReader(fh)]


# --------------------------------------------------------------------------
# episode dumps


def dump_lines(model, seed: int, split="test") -> list[str]:
    rng = np.random.default_rng(seed)
    scene = sim.sample_scene(rng, split, model.sim)
    noise = rng.standard_normal((1, model.cfg.n_probes, N_COMPONENTS))
    batch = model.rollout([scene], noise)
    pred = predictions(batch.probs[0])
    out = ["scene " + scene.record()]
    for k in range(model.cfg.n_probes):
        req, pt = batch.requests[0, k], batch.points[0, k]
        nums = " ".join(f"{v:.17g}" for v in (*req, *pt[:3]))
        out.append(f"{k + 1} {nums} {int(pt[3])} {int(pred[k])} {int(batch.labels[0])}")
    return out


# --------------------------------------------------------------------------
# commands


def manifest(cfg) -> dict:
    return {
        "config": cfg.as_dict(),
        "seed": cfg.seed,
        "versions": {"hglance": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "kernel_backend": kernels.BACKEND,
        "threads": trainer.thread_count(),
    }


def _staging_dir(out: Path) -> Path:
    parent = out.parent
    if out.exists() and not out.is_dir():
        raise UsageError(f"output path {out} exists and is not a directory")
    try:
        return Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=parent))
    except OSError as exc:
        raise UsageError(f"cannot write under {parent}: {exc.strerror or exc}") from None


def _publish(stage: Path, out: Path):
    """Move every staged file into ``out``, one atomic rename per file."""
    out.mkdir(parents=True, exist_ok=True)
    for src in sorted(stage.rglob("*")):
        if src.is_file():
            dst = out / src.relative_to(stage)
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, dst)


def cmd_train(args) -> int:
    overrides = {"steps": args.steps, "batch": args.batch, "seed": args.seed,
                 "variant": args.variant, "advantage": args.advantage}
    cfg = parse_config(args.config, overrides)
    out = Path(args.out)
    stage = _staging_dir(out)
    try:
        atomic_write(stage / "manifest.json",
                     (json.dumps(manifest(cfg), indent=2, sort_keys=True) + "\n").encode())

        def progress(step, batch):
            if step % args.log_every == 0 or step == cfg.steps:
                log.info("step %d/%d  accuracy@N %.3f  mean reward %.3f", step, cfg.steps,
                         batch.rewards[:, -1].mean(), batch.rewards.mean())

        trainer.train(cfg, stage, on_step=progress)
        _publish(stage, out)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    print(f"wrote {out / 'checkpoint.hglc'} and {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    model, _ = trainer.load_model(args.checkpoint)
    acc = trainer.evaluate(model, args.episodes, args.split, seed=args.seed, greedy=args.greedy)
    rows = report_rows(acc)
    sys.stdout.write(render_table(rows, model.cfg.variant, args.split, args.episodes))
    out = Path(args.out) if args.out else Path(f"eval_{args.split}.csv")
    atomic_write(out, report_csv(rows).encode())
    return EXIT_OK


def cmd_dump(args) -> int:
    model, _ = trainer.load_model(args.checkpoint)
    text = "\n".join(dump_lines(model, args.seed, args.split)) + "\n"
    if args.out:
        atomic_write(Path(args.out), text.encode())
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hglance", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=("fc", "nclass"))
    p.add_argument("--advantage", choices=("reward", "return"))
    p.add_argument("--out", default="runs/train", help="output directory (default: %(default)s)")
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(run=cmd_train)

    p = sub.add_parser("eval", help="per-probe accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--seed", type=int, help="episode seed (default: the training seed)")
    p.add_argument("--greedy", action="store_true", help="act with the mean instead of sampling")
    p.add_argument("--out", help="CSV path (default: eval_<split>.csv)")
    p.set_defaults(run=cmd_eval)

    p = sub.add_parser("dump-episode", help="write one episode's probes and points as text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(run=cmd_dump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.run(args)
    except (ConfigError, UsageError) as exc:
        print(f"hglance: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HGlanceError, OSError, ValueError) as exc:
        print(f"hglance: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
