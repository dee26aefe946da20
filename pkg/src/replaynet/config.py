"""Run configuration: a flat ``key: value`` JSON schema plus command-line overrides.

Keys (nested objects are flattened with dots, so ``{"optim": {"learning_rate": 0.01}}``
and ``{"optim.learning_rate": 0.01}`` are equivalent)::

    seed                  int, required
    data                  corpus path (train / evaluate)
    out                   output directory
    epochs                int, default 10
    save_every            epochs between checkpoints (0 = only the last), default 1
    train_fraction        default 0.8
    variant               replay | noste | noqt | multig | fixedb | flashback
    model.cell            vanilla | gru | lstm
    model.embed_dim       default 10
    model.segment         training-window length, default 20
    model.use_ste, model.use_query_time, model.multi_granularity   override the variant flags
    model.fixed_bandwidth σ for the fixed-bandwidth variant (default 1.0)
    time.scale            day | weekday_weekend | week
    time.granularity      hour | minute
    flashback.alpha, flashback.beta, flashback.window
    optim.learning_rate, optim.beta1, optim.beta2, optim.epsilon, optim.weight_decay
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

from .flashback import FlashbackConfig
from .model import VARIANTS, ModelConfig
from .numerics import OptimizerConfig
from .temporal import TimestampScheme


class ConfigError(ValueError):
    pass


_VARIANT_FLAGS = ("use_ste", "use_query_time", "multi_granularity", "fixed_bandwidth")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    data: str | None = None
    out: str | None = None
    epochs: int = 10
    save_every: int = 1
    train_fraction: float = 0.8
    variant: str = "replay"
    cell: str = "vanilla"
    embed_dim: int = 10
    segment: int = 20
    time_scale: str = "week"
    time_granularity: str = "hour"
    fixed_bandwidth_value: float = 1.0
    flag_overrides: dict = field(default_factory=dict)
    flashback: FlashbackConfig = field(default_factory=FlashbackConfig)
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError(f"seed: must be an integer, got {self.seed!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: unknown {self.variant!r}; expected one of {sorted(VARIANTS)}")
        if self.epochs < 0:
            raise ConfigError("epochs: must be non-negative")
        if self.save_every < 0:
            raise ConfigError("save_every: must be non-negative")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction: must lie in (0, 1)")
        try:
            TimestampScheme(self.time_scale, self.time_granularity)
        except ValueError as exc:
            raise ConfigError(f"time: {exc}") from None

    @property
    def scheme(self) -> TimestampScheme:
        return TimestampScheme(self.time_scale, self.time_granularity)

    def model_config(self, poi_count: int, user_count: int) -> ModelConfig:
        flags = dict(use_ste=False, use_query_time=False, fixed_bandwidth=None, multi_granularity=False)
        flags.update(VARIANTS[self.variant])
        if flags["fixed_bandwidth"] is not None:
            flags["fixed_bandwidth"] = self.fixed_bandwidth_value
        flags.update(self.flag_overrides)
        try:
            return ModelConfig(poi_count=poi_count, user_count=user_count, embed_dim=self.embed_dim,
                               cell=self.cell, scheme=self.scheme, flashback=self.flashback,
                               segment=self.segment, **flags)
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from None

    def to_flat(self) -> dict:
        d = {
            "seed": self.seed, "data": self.data, "out": self.out, "epochs": self.epochs,
            "save_every": self.save_every, "train_fraction": self.train_fraction, "variant": self.variant,
            "model.cell": self.cell, "model.embed_dim": self.embed_dim, "model.segment": self.segment,
            "model.fixed_bandwidth": self.fixed_bandwidth_value,
            "time.scale": self.time_scale, "time.granularity": self.time_granularity,
        }
        for k, v in self.flag_overrides.items():
            d[f"model.{k}"] = v
        for f in fields(FlashbackConfig):
            d[f"flashback.{f.name}"] = getattr(self.flashback, f.name)
        for f in fields(OptimizerConfig):
            d[f"optim.{f.name}"] = getattr(self.optim, f.name)
        return d


_TOP = {"seed": int, "data": str, "out": str, "epochs": int, "save_every": int,
        "train_fraction": float, "variant": str}
_MODEL = {"model.cell": ("cell", str), "model.embed_dim": ("embed_dim", int),
          "model.segment": ("segment", int), "model.fixed_bandwidth": ("fixed_bandwidth_value", float),
          "time.scale": ("time_scale", str), "time.granularity": ("time_granularity", str)}


def flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, value, typ):
    if value is None and typ is str:
        return None
    if typ is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if typ is int and (isinstance(value, bool) or (isinstance(value, float) and not value.is_integer())):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    try:
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}") from None


def from_flat(flat: dict) -> RunConfig:
    """Build a :class:`RunConfig` from flat dotted keys; unknown keys are errors."""
    if "seed" not in flat or flat["seed"] is None:
        raise ConfigError("seed: a seed is required")
    kw, flags, fb, opt = {}, {}, {}, {}
    fb_fields = {f.name: f.type for f in fields(FlashbackConfig)}
    opt_fields = {f.name for f in fields(OptimizerConfig)}
    for key, value in flat.items():
        if key in _TOP:
            kw[key] = _coerce(key, value, _TOP[key])
        elif key in _MODEL:
            name, typ = _MODEL[key]
            kw[name] = _coerce(key, value, typ)
        elif key.startswith("model.") and key[6:] in _VARIANT_FLAGS and key[6:] != "fixed_bandwidth":
            flags[key[6:]] = _coerce(key, value, bool)
        elif key.startswith("flashback.") and key[10:] in fb_fields:
            fb[key[10:]] = _coerce(key, value, int if key.endswith("window") else float)
        elif key.startswith("optim.") and key[6:] in opt_fields:
            opt[key[6:]] = _coerce(key, value, float)
        else:
            raise ConfigError(f"{key}: unknown configuration key")
    try:
        kw["flashback"] = FlashbackConfig(**fb)
        kw["optim"] = OptimizerConfig(**opt)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(flag_overrides=flags, **kw)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config file (optional) and apply ``overrides`` on top."""
    flat = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        flat = flatten(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            flat[k] = v
    return from_flat(flat)


def with_changes(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, **kw)
