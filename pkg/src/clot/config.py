"""Run configuration and its flat ``key = value`` text form.

Plain keys (``alpha``, ``epsilon``, ``lambda``, ``outer_iters``, ``inner_iters``,
``tol``) set the solver options of all three stages; a ``stageN.`` prefix
overrides one stage, e.g. ``stage2.alpha = 0.5``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .core import InputError, ParameterError
from .ot import OtConfig

# column-KL weight for training; looser values let segment plans collapse onto one action
TRAIN_LAMBDA = 1.0

OT_KEYS = {"alpha": "alpha", "epsilon": "epsilon", "lambda": "lam", "outer_iters": "outer_iters",
           "inner_iters": "inner_iters", "tol": "tol"}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 2
    frames_per_video: int = 256
    lr: float = 1e-3
    weight_decay: float = 1e-4
    dropout: float = 0.5
    dec_dropout: float = 0.1
    hidden_dim: int = 128
    embed_dim: int = 64
    dec_dim: int = 64
    dec_layers: int = 2
    dec_heads: int = 8
    tau: float = 3.0
    rho: float = 0.15
    rho_s: float = 0.0
    nr_fraction: float = 0.04
    nseg: int = 0
    p_factor: int = 2
    n_actions: int = 0  # 0: take K from the dataset manifest
    swd_stages: str = "1"
    detach_s_in_refine: bool = False
    init_max_frames: int = 10_000
    kmeans_iters: int = 100
    seed: int = 0
    stage1: OtConfig = field(default_factory=lambda: OtConfig(lam=TRAIN_LAMBDA))
    stage2: OtConfig = field(default_factory=lambda: OtConfig(lam=TRAIN_LAMBDA))
    stage3: OtConfig = field(default_factory=lambda: OtConfig(lam=TRAIN_LAMBDA))

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.frames_per_video < 1:
            raise ParameterError("frames_per_video must be positive")
        if self.n_actions and self.frames_per_video < self.n_actions:
            raise ParameterError("frames_per_video must be at least the number of actions")
        if not 0 < self.nr_fraction <= 1:
            raise ParameterError(f"nr_fraction must be in (0, 1], got {self.nr_fraction}")
        if self.rho < 0 or self.rho_s < 0:
            raise ParameterError("rho and rho_s must be nonnegative")
        if self.p_factor < 1:
            raise ParameterError("p_factor must be >= 1")
        if not set(self.swd_stages) <= set("123"):
            raise ParameterError(f"swd_stages must list stages from 1-3, got {self.swd_stages!r}")

    def stage(self, i: int) -> OtConfig:
        return (self.stage1, self.stage2, self.stage3)[i - 1]

    def uses_swd(self, stage: int) -> bool:
        return str(stage) in self.swd_stages

    def n_queries(self, k: int) -> int:
        return max(1, k + self.nseg)


_SCALAR_FIELDS = {f.name: f for f in fields(TrainConfig) if not f.name.startswith("stage")}


def _coerce(raw: str, kind, key: str):
    try:
        if kind in (bool, "bool"):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise InputError(f"bad value for {key!r}: {raw!r}") from None


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; later keys win."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise InputError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def config_from_pairs(pairs: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    top: dict = {}
    ot_all: dict = {}
    ot_stage: dict[int, dict] = {1: {}, 2: {}, 3: {}}
    for key, raw in pairs.items():
        if key in OT_KEYS:
            ot_all[OT_KEYS[key]] = raw
        elif key.startswith("stage") and "." in key:
            prefix, sub = key.split(".", 1)
            if prefix not in ("stage1", "stage2", "stage3") or sub not in OT_KEYS:
                raise InputError(f"unknown config key {key!r}")
            ot_stage[int(prefix[-1])][OT_KEYS[sub]] = raw
        elif key in _SCALAR_FIELDS:
            top[key] = _coerce(raw, _SCALAR_FIELDS[key].type, key)
        else:
            raise InputError(f"unknown config key {key!r}")
    ot_types = {f.name: f.type for f in fields(OtConfig)}
    for i in (1, 2, 3):
        merged = {**ot_all, **ot_stage[i]}
        if merged:
            values = {k: _coerce(v, ot_types[k], k) for k, v in merged.items()}
            top[f"stage{i}"] = dataclasses.replace(base.stage(i), **values)
    return dataclasses.replace(base, **top)


def parse_config(text: str, source: str = "<config>") -> TrainConfig:
    return config_from_pairs(parse_pairs(text, source))


def load_config(path) -> TrainConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def format_config(cfg: TrainConfig) -> str:
    """Inverse of :func:`parse_config`: every field written explicitly."""
    lines = []
    for name in _SCALAR_FIELDS:
        value = getattr(cfg, name)
        lines.append(f"{name} = {str(value).lower() if isinstance(value, bool) else value}")
    for i in (1, 2, 3):
        st = cfg.stage(i)
        for key, attr in OT_KEYS.items():
            lines.append(f"stage{i}.{key} = {getattr(st, attr)!r}")
    return "\n".join(lines) + "\n"
