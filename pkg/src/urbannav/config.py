"""One YAML config with a section per stage, plus ``--set key=value`` overrides.

Defaults reproduce the published hyperparameters; unknown keys are
rejected and override values are type-checked against the defaults.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dataset import SamplingParams
from .losses import LossWeights
from .model import ModelConfig
from .scenarios import TaggerConfig


class ConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    seed: int = 0
    n: int = 500
    domain: str = "walking"
    length: int = 80
    position_noise: float = 0.0


@dataclass
class DataConfig:
    sampling: SamplingParams = field(default_factory=SamplingParams)
    frame_stride: int = 1


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 2e-4
    fine_tune_lr: float = 5e-5
    optimizer: str = "adamw"
    weight_decay: float = 0.01
    schedule: str = "cosine"
    orientation_loss: bool = True
    hallucination: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 1  # epochs
    eval_every: int = 1  # epochs; 0 disables
    shards: list = field(default_factory=list)
    finetune_shards: list = field(default_factory=list)

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not (self.learning_rate > 0 and self.fine_tune_lr > 0):
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.optimizer != "adamw":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unsupported schedule {self.schedule!r}")


@dataclass
class EvalConfig:
    aggregator: str = "max"
    softmax_temperature: float = 5.0
    eps: float = 1e-8
    batch_size: int = 256


@dataclass
class SimConfig:
    dt: float = 0.1
    policy_period: int = 5  # sim steps between policy queries
    step_length: float = 0.5  # meters per normalized unit
    max_linear: float = 1.0
    max_angular: float = 1.0
    kp_linear: float = 1.0
    kp_angular: float = 1.5
    kd_angular: float = 0.1
    track_waypoint: int = 3  # 1-based index of the predicted waypoint to follow
    success_radius: float = 5.0
    corridor_half_width: float = 3.0
    arrival_threshold: float = 0.5
    courses_per_category: int = 10
    seed: int = 0


@dataclass
class AppConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    data: DataConfig = field(default_factory=DataConfig)
    tagger: TaggerConfig = field(default_factory=TaggerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sim: SimConfig = field(default_factory=SimConfig)


def _coerce(default, value, key: str):
    if dataclasses.is_dataclass(default):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a mapping")
        return _merge(default, value, key + ".")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 reads "1e-4" (no dot) as a string
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return list(value)
    if default is None:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string or null, got {value!r}")
        return value
    raise ConfigError(f"{key}: unsupported value type")


def _merge(obj, updates: dict, prefix: str = ""):
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for k, v in updates.items():
        if k not in names:
            raise ConfigError(f"unknown config key {prefix}{k}")
        changes[k] = _coerce(getattr(obj, k), v, prefix + k)
    try:
        return dataclasses.replace(obj, **changes)
    except ValueError as e:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {e}") from None


def parse_override(text: str) -> dict:
    """``"train.epochs=3"`` -> ``{"train": {"epochs": 3}}`` (value parsed as YAML)."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not key=value")
    value = yaml.safe_load(raw) if raw.strip() else ""
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def _deep_update(base: dict, upd: dict):
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def load_config(path=None, overrides=()) -> AppConfig:
    raw: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text())
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        raw = loaded or {}
    for o in overrides:
        _deep_update(raw, parse_override(o))
    return _merge(AppConfig(), raw)


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: AppConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
