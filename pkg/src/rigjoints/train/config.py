"""Training configuration read from a flat TOML file."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..model import ModelConfig


class ConfigError(ValueError):
    """Unknown keys, wrong types or invalid values in a configuration."""


SCHEDULER_METRICS = ("val_mpjpe", "train_loss")


@dataclass
class TrainConfig:
    data_dir: str = ""
    out_dir: str = "run"
    train_split: str = "train"
    val_split: str = "val"
    epochs: int = 100
    batch_size: int = 1
    initial_lr: float = 1e-3
    weight_decay: float = 1e-4
    patience: int = 8
    decay: float = 0.75
    warmup: int = 0
    seed: int = 0
    augment: bool = True
    scale_min: float = 0.8
    scale_max: float = 1.2
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.05
    scheduler_metric: str = "val_mpjpe"
    k_neighbors: int = 80
    joint_count: int = 69
    use_normals: bool = True

    def validate(self) -> None:
        if self.batch_size != 1:
            raise ConfigError("batch_size must be 1 (clouds have varying point counts)")
        if self.epochs < 0 or self.patience < 0 or self.warmup < 0:
            raise ConfigError("epochs, patience and warmup must be non-negative")
        if self.initial_lr < 0 or self.weight_decay < 0:
            raise ConfigError("initial_lr and weight_decay must be non-negative")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("decay must lie in (0, 1)")
        if not 0.0 < self.scale_min <= self.scale_max:
            raise ConfigError("need 0 < scale_min <= scale_max")
        if self.jitter_sigma < 0 or self.jitter_clip < 0:
            raise ConfigError("jitter_sigma and jitter_clip must be non-negative")
        if self.scheduler_metric not in SCHEDULER_METRICS:
            raise ConfigError(f"scheduler_metric must be one of {SCHEDULER_METRICS}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(k_neighbors=self.k_neighbors, joint_count=self.joint_count, use_normals=self.use_normals)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: dict, source: str = "config") -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
        kwargs = {}
        for key, value in values.items():
            kind = type(getattr(cls(), key))
            if kind is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
                raise ConfigError(f"{source}: key {key!r} expects {kind.__name__}, got {type(value).__name__}")
            kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                values = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"{path}: config file not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        nested = [k for k, v in values.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"{path}: tables are not supported (found {', '.join(nested)}); use flat keys")
        return cls.from_mapping(values, str(path))
