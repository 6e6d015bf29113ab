"""Run configuration: defaults, ``key = value`` files and flag overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigTypeError, RangeError, UnknownKey
from .sim import SimConfig

N_MAX = 10


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 8000
    batch: int = 64
    n_probes: int = 10
    gamma: float = 0.9
    alpha: float = 1e-3
    beta: float = 1.0
    sigma_min: float = 0.01
    init_sigma: float = 0.2
    init_uz: float = 0.8
    seed: int = 0
    variant: str = "fc"
    advantage: str = "reward"
    optimizer: str = "adam"
    baseline_weight: float = 0.5
    d_feat: int = 64
    d_rep: int = 64
    attn_hidden: int = 64
    loc_hidden: int = 64
    checkpoint_every: int = 500
    chunk: int = 16
    test_rz_lo: float = 30.0
    test_rz_hi: float = 60.0
    test_x_lo: float = 0.2
    test_x_hi: float = 0.3
    u_len_max: float = 3.0

    def __post_init__(self):
        validate(self)

    def sim(self) -> SimConfig:
        return SimConfig(u_len_max=self.u_len_max,
                         test_rz=(self.test_rz_lo, self.test_rz_hi),
                         test_x=(self.test_x_lo, self.test_x_hi))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        return dataclasses.asdict(self)


_CHOICES = {
    "variant": ("fc", "nclass"),
    "advantage": ("reward", "return"),
    "optimizer": ("adam", "sgd"),
}


def validate(cfg: TrainConfig, lines: dict | None = None):
    lines = lines or {}

    def need(ok, key, message):
        if not ok:
            raise RangeError(f"{key}: {message}", lines.get(key))

    need(0.0 <= cfg.gamma < 1.0, "gamma", f"γ must lie in [0, 1), got {cfg.gamma}")
    need(cfg.alpha > 0.0, "alpha", f"α must be > 0, got {cfg.alpha}")
    need(cfg.beta >= 0.0, "beta", f"β must be >= 0, got {cfg.beta}")
    need(1 <= cfg.n_probes <= N_MAX, "n_probes", f"N must lie in [1, {N_MAX}], got {cfg.n_probes}")
    need(cfg.steps >= 0, "steps", "must be >= 0")
    need(cfg.batch >= 1, "batch", "must be >= 1")
    need(0.0 < cfg.sigma_min < 0.5, "sigma_min", "must lie in (0, 0.5)")
    need(cfg.sigma_min < cfg.init_sigma < 1.0, "init_sigma", "must lie in (sigma_min, 1)")
    need(-1.0 < cfg.init_uz < 1.0, "init_uz", "must lie in (-1, 1)")
    need(cfg.baseline_weight >= 0.0, "baseline_weight", "must be >= 0")
    need(cfg.checkpoint_every >= 1, "checkpoint_every", "must be >= 1")
    need(cfg.chunk >= 1, "chunk", "must be >= 1")
    need(cfg.u_len_max > 0.0, "u_len_max", "must be > 0")
    for key in ("d_feat", "d_rep", "attn_hidden", "loc_hidden"):
        need(getattr(cfg, key) >= 1, key, "must be >= 1")
    need(cfg.test_rz_lo <= cfg.test_rz_hi, "test_rz_lo", "band is empty")
    need(cfg.test_x_lo <= cfg.test_x_hi, "test_x_lo", "band is empty")
    for key, options in _CHOICES.items():
        need(getattr(cfg, key) in options, key, f"must be one of {', '.join(options)}")


FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def coerce(key, raw, line=None):
    kind = FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigTypeError(f"{key}: expected {kind}, got {raw!r}", line) from None
    return str(raw)


def parse_config_text(text: str) -> tuple[dict, dict]:
    """Parse ``key = value`` lines. Returns ``(values, line_numbers)``."""
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigTypeError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in FIELD_TYPES:
            raise UnknownKey(f"unknown key {key!r}", lineno)
        values[key] = coerce(key, value, lineno)
        lines[key] = lineno
    return values, lines


def parse_config(path=None, overrides: dict | None = None) -> TrainConfig:
    """Defaults, then the file (if any), then non-None ``overrides``."""
    values, lines = {}, {}
    if path is not None:
        values, lines = parse_config_text(Path(path).read_text(encoding="utf-8"))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in FIELD_TYPES:
            raise UnknownKey(f"unknown key {key!r}")
        values[key] = coerce(key, value)
        lines.pop(key, None)
    base = TrainConfig.__new__(TrainConfig)
    for f in fields(TrainConfig):
        object.__setattr__(base, f.name, values.get(f.name, f.default))
    validate(base, lines)
    return base
