"""Experiment configuration: nested dataclasses loaded from strict JSON.

Unknown keys and wrongly typed values are rejected before any work starts.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Tuple

from .encoder import EncoderConfig
from .errors import ConfigError
from .evaluation import EvalConfig
from .losses import LossWeights
from .sampling import ResolutionThreshold, SamplerConfig
from .superres import SRConfig
from .trainer import TrainConfig

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class DataConfig:
    seed: int = 7
    n_identities: int = 8
    tracklets_per_identity: int = 4
    frames_per_tracklet: int = 8
    resolution_range: Tuple[int, int] = (32, 200)
    root: Optional[str] = None  # ingest from disk instead of generating
    # optional corruptions applied to every frame, e.g. [["jpeg", 30]]; off by default
    degradations: Tuple[Tuple[str, float], ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataConfig = DataConfig()
    threshold: ResolutionThreshold = ResolutionThreshold()
    sampler: SamplerConfig = SamplerConfig()
    encoder: EncoderConfig = EncoderConfig()
    sr: SRConfig = SRConfig()
    losses: LossWeights = LossWeights()
    trainer: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {self.schema_version} unsupported (expected {SCHEMA_VERSION})")
        self.sampler.validate()
        self.encoder.validate()
        self.sr.validate()
        self.losses.validate()
        self.trainer.validate()
        self.eval.validate()
        self.threshold.validate(self.sampler.encoder_input)
        if tuple(self.sampler.encoder_input) != tuple(self.encoder.input_resolution):
            raise ConfigError("sampler.encoder_input must equal encoder.input_resolution")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return from_dict(tp, value, where)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{where}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def from_dict(cls, data: dict, where: str = "config"):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    return cls(**kwargs)


def load_config(path, seed: Optional[int] = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg = from_dict(ExperimentConfig, raw)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg.validate()


def parse_config(raw: dict) -> ExperimentConfig:
    return from_dict(ExperimentConfig, raw).validate()
