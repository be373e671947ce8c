"""Run configuration: YAML file <-> nested dataclasses."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .augment import SafeZoneConfig
from .errors import ConfigError
from .model import ModelConfig
from .objectives import ConsistencyKind, LossWeights
from .ssl import ThresholdSchedule

MODES = ("base", "base_c", "base_cp")


@dataclass
class OptimConfig:
    lr: float = 1e-5
    weight_decay: float = 0.01


@dataclass
class LossConfig:
    w_cls: float = 1.0
    w_consis: float = 0.008
    consistency: str = "ce"
    cls_on_clean: bool = False


@dataclass
class SSLConfig:
    """Settings of the pseudo-labelling stage (resumed from a base_c checkpoint)."""

    t_min: float = 0.81
    t_max: float = 0.85
    step: float = 0.1
    update_period_epochs: int = 2
    lr: float = 1e-6
    w_consis: float = 0.003
    epochs: int = 30
    relabel: bool = False

    @property
    def schedule(self) -> ThresholdSchedule:
        return ThresholdSchedule(self.t_min, self.t_max, self.step, self.update_period_epochs)


@dataclass
class AugmentConfig:
    n: int = 2
    word_safe_radius: int = 1

    @property
    def safe_zone(self) -> SafeZoneConfig:
        return SafeZoneConfig(self.n, self.word_safe_radius)


@dataclass
class PathsConfig:
    inventory: Optional[str] = None
    lexicon: Optional[str] = None
    embeddings: Optional[str] = None
    labeled: Optional[str] = None
    unlabeled: Optional[str] = None
    dev: Optional[str] = None
    test: Optional[str] = None
    out_dir: str = "runs/default"
    init_checkpoint: Optional[str] = None


@dataclass
class RunConfig:
    mode: str = "base"
    seed: int = 0
    epochs: int = 130
    batch_size: int = 128
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    ssl: SSLConfig = field(default_factory=SSLConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    eval_batch_size: int = 256

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "base" and self.loss.w_consis != 0:
            raise ConfigError("mode 'base' trains without consistency loss; set loss.w_consis to 0")
        if self.epochs < 0 or self.ssl.epochs < 0:
            raise ConfigError("epoch counts must be nonnegative")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError("batch_size must be an even number >= 2")
        try:
            ConsistencyKind(self.loss.consistency)
        except ValueError:
            raise ConfigError(f"unknown consistency kind {self.loss.consistency!r}") from None
        LossWeights(self.loss.w_cls, self.loss.w_consis)
        LossWeights(self.loss.w_cls, self.ssl.w_consis)
        self.ssl.schedule
        self.augment.safe_zone
        self.model.validate()
        for name in ("inventory", "labeled"):
            if getattr(self.paths, name) is None:
                raise ConfigError(f"paths.{name} is required")
        if self.mode == "base_cp" and self.paths.unlabeled is None:
            raise ConfigError("mode 'base_cp' needs paths.unlabeled")
        return self


def _coerce(tp, value, where):
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{where} must be a mapping")
        return _build(tp, value, where)
    if value is None:
        return None
    target = {"float": float, "int": int, "bool": bool, "str": str}.get(
        tp if isinstance(tp, str) else getattr(tp, "__name__", ""), None
    )
    if target is None and isinstance(tp, str) and tp.startswith("Optional["):
        target = {"Optional[str]": str}.get(tp)
    if target is None:
        return value
    try:
        if target is bool and not isinstance(value, bool):
            raise ValueError
        if target is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        return target(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot read {value!r} as {target.__name__}") from None


_NESTED = {
    "optimizer": OptimConfig,
    "loss": LossConfig,
    "ssl": SSLConfig,
    "augment": AugmentConfig,
    "model": ModelConfig,
    "paths": PathsConfig,
}


def _build(cls, data: Mapping, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        tp = _NESTED.get(name) if cls is RunConfig else None
        kwargs[name] = _coerce(tp or known[name].type, value, f"{where}.{name}")
    return cls(**kwargs)


def config_from_mapping(data: Mapping, base_dir: Optional[Path] = None) -> RunConfig:
    if "seed" not in data:
        raise ConfigError("config needs an explicit 'seed'")
    cfg = _build(RunConfig, data, "config")
    if base_dir is not None:
        for f in fields(PathsConfig):
            value = getattr(cfg.paths, f.name)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg.paths, f.name, str((base_dir / value).resolve()))
    return cfg.validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_mapping(data, path.parent)


def config_to_mapping(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_yaml_mapping(path) -> Mapping[str, Any]:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data
