"""Run configuration: one flat ``section.key: value`` document covering every module."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .alignment import ContrastiveConfig
from .backbones import BackboneConfig
from .dataio import AugmentParams
from .distillation import KDConfig
from .segloss import LossConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 4
    base_lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    grad_clip: float = 10.0
    seed: int = 0
    schedule: str = "cosine"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class EvalConfig:
    bev_extent: float = 25.0
    bev_resolution: float = 0.1


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: BackboneConfig = field(default_factory=BackboneConfig)
    align: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    kd: KDConfig = field(default_factory=KDConfig)
    aug: AugmentParams = field(default_factory=AugmentParams)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def sections(cls) -> dict[str, type]:
        return {f.name: f.default_factory().__class__ for f in dataclasses.fields(cls)}

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        grouped: dict[str, dict] = {name: {} for name in cls.sections()}
        for key, value in flat.items():
            section, _, name = str(key).partition(".")
            if section not in grouped or not name:
                raise ConfigError(f"unknown config key {key!r}")
            grouped[section][name] = value
        kwargs = {}
        for section, values in grouped.items():
            klass = cls.sections()[section]
            defaults = klass()
            known = {f.name: f for f in dataclasses.fields(klass)}
            coerced = {}
            for name, value in values.items():
                if name not in known:
                    raise ConfigError(f"unknown config key {section}.{name!r}")
                coerced[name] = _coerce(f"{section}.{name}", getattr(defaults, name), value)
            try:
                kwargs[section] = klass(**coerced)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {section} config: {exc}") from exc
        return cls(**kwargs)

    def to_flat(self) -> dict:
        out = {}
        for section in self.sections():
            for f in dataclasses.fields(getattr(self, section)):
                value = getattr(getattr(self, section), f.name)
                out[f"{section}.{f.name}"] = list(value) if isinstance(value, tuple) else value
        return out

    def replace(self, **flat) -> "RunConfig":
        """Copy with some ``section.key`` values overridden (pass as ``section__key``)."""
        merged = self.to_flat()
        for key, value in flat.items():
            merged[key.replace("__", ".", 1)] = value
        return RunConfig.from_flat(merged)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_flat(), sort_keys=True)

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_flat(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


def _coerce(key, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list, got {value!r}")
        return tuple(float(v) for v in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    return value


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping of section.key: value")
    return RunConfig.from_flat(_flatten(doc))


def _flatten(doc: dict, prefix: str = "") -> dict:
    # nested sections are accepted too, and flattened
    out = {}
    for key, value in doc.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, full + "."))
        else:
            out[full] = value
    return out
