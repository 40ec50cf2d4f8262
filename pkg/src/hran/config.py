"""Configuration records and the ``key = value`` run-config format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

ATTENTION_KINDS = ("lca", "ca", "eca", "pa", "none")
PLACEMENTS = ("parallel", "in_place")
SCALES = (2, 3, 4)


class ConfigError(ValueError):
    pass


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator keyed by ``seed`` and an optional stream index.

    The same key always yields the same sequence, on every platform.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1), *map(int, stream)])))


@dataclass(frozen=True)
class ModelConfig:
    num_rafgs: int = 3
    blocks_per_rafg: int = 3
    channels: int = 48
    scale: int = 4
    attention: str = "lca"
    placement: str = "parallel"
    banks: bool = True
    ca_reduction: int = 16
    eca_kernel: int = 3
    weight_norm: bool = True

    def __post_init__(self):
        if self.num_rafgs < 1 or self.blocks_per_rafg < 1 or self.channels < 1:
            raise ConfigError("num_rafgs, blocks_per_rafg and channels must all be >= 1")
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}, got {self.scale}")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of {ATTENTION_KINDS}, got {self.attention!r}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if self.placement == "in_place" and self.attention == "none":
            raise ConfigError("in_place placement needs an attention kind")
        if self.attention == "ca" and (self.ca_reduction < 1 or self.channels % self.ca_reduction):
            raise ConfigError(f"channels={self.channels} not divisible by ca_reduction={self.ca_reduction}")
        if self.eca_kernel < 1 or self.eca_kernel % 2 == 0:
            raise ConfigError(f"eca_kernel must be odd and positive, got {self.eca_kernel}")

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "BI"
    scale: int = 4
    blur_size: int = 7
    blur_sigma: float = 1.6
    allow_any_scale: bool = False

    def __post_init__(self):
        if self.kind not in ("BI", "BD"):
            raise ConfigError(f"degradation must be BI or BD, got {self.kind!r}")
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if self.kind == "BD" and self.scale != 3 and not self.allow_any_scale:
            raise ConfigError("BD degradation is defined for x3; set allow_any_scale to use other scales")
        if self.blur_size < 1 or self.blur_size % 2 == 0 or self.blur_sigma <= 0:
            raise ConfigError("blur_size must be odd and blur_sigma positive")


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int
    seed: int
    batch_size: int = 64
    patch_size: int = 64
    base_lr: float = 1e-3
    halve_every: int = 200_000
    checkpoint_every: int = 0
    log_every: int = 100
    val_every: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("total_iters", "batch_size", "patch_size", "halve_every", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if self.checkpoint_every < 0 or self.val_every < 0:
            raise ConfigError("checkpoint_every and val_every must be >= 0 (0 disables)")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


# run-config file keys -> (section, field)
MODEL_KEYS = {f.name: f.name for f in fields(ModelConfig)}
TRAIN_KEYS = {f.name: f.name for f in fields(TrainConfig)}
DEGRADATION_KEYS = {"degradation": "kind", "blur_size": "blur_size", "blur_sigma": "blur_sigma",
                    "allow_any_scale": "allow_any_scale"}


def _field_types(cls):
    hints = {"int": int, "float": float, "bool": bool, "str": str}
    return {f.name: hints[f.type] for f in fields(cls)}


def _coerce(key: str, raw, kind):
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if kind is int:
            return int(float(raw)) if isinstance(raw, str) and "e" in raw.lower() else int(raw)
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


@dataclass
class RunConfig:
    """Model, training and degradation settings resolved from file + flags."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: Optional[TrainConfig] = None
    degradation: DegradationSpec = field(default_factory=DegradationSpec)

    @classmethod
    def from_mapping(cls, values: dict, source: str = "<config>") -> "RunConfig":
        known = set(MODEL_KEYS) | set(TRAIN_KEYS) | set(DEGRADATION_KEYS)
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
        mt, tt, dt = _field_types(ModelConfig), _field_types(TrainConfig), _field_types(DegradationSpec)
        m = {k: _coerce(k, v, mt[k]) for k, v in values.items() if k in MODEL_KEYS}
        t = {k: _coerce(k, v, tt[k]) for k, v in values.items() if k in TRAIN_KEYS}
        d = {DEGRADATION_KEYS[k]: _coerce(k, v, dt[DEGRADATION_KEYS[k]]) for k, v in values.items()
             if k in DEGRADATION_KEYS}
        if "attention" in m:
            m["attention"] = m["attention"].lower()
        try:
            model = ModelConfig(**m)
            train = TrainConfig(**t) if {"total_iters", "seed"} <= set(t) else None
            if t and train is None:
                missing = {"total_iters", "seed"} - set(t)
                raise ConfigError(f"{source}: training keys given but {', '.join(sorted(missing))} missing")
            degradation = DegradationSpec(scale=model.scale, **d)
        except TypeError as exc:
            raise ConfigError(f"{source}: {exc}") from None
        return cls(model, train, degradation)

    def to_mapping(self) -> dict:
        out = dataclasses.asdict(self.model)
        if self.train is not None:
            out.update(dataclasses.asdict(self.train))
        deg = dataclasses.asdict(self.degradation)
        for key, attr in DEGRADATION_KEYS.items():
            out[key] = deg[attr]
        return out

    def dumps(self) -> str:
        lines = [f"{k} = {_format_value(v)}" for k, v in self.to_mapping().items()]
        return "\n".join(lines) + "\n"


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_run_config(path, overrides: Optional[dict] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    values = parse_config_text(text, str(path))
    values.update(overrides or {})
    return RunConfig.from_mapping(values, str(path))
