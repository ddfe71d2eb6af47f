"""YAML pipeline configuration with strict key, type and range checking."""

from __future__ import annotations

import dataclasses
import math
import re
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .ctgan import TrainConfig
from .tds.scenario import ScenarioConfig


class ConfigError(ValueError):
    """Bad configuration; the message names the offending key path."""


@dataclass(frozen=True)
class PathsConfig:
    case: str | None = None  # None selects the bundled 39-bus case
    data: str = "data/samples.csv"
    train: str = "data/train.csv"
    test: str = "data/test.csv"
    transformer: str = "out/transformer.json"
    model: str = "out/model.pt"
    generated: str = "out/generated.csv"
    output_dir: str = "out/reports"


@dataclass(frozen=True)
class SimulationConfig:
    n_samples: int = 3000
    load_scale_range: tuple[float, float] = (0.60, 1.45)
    fault_position_range: tuple[float, float] = (0.20, 0.80)
    clearing_time_range: tuple[float, float] = (1.0 / 60.0, 1.0 / 3.0)
    horizon: float = 10.0
    step: float = 0.005
    workers: int = 1


@dataclass(frozen=True)
class PreprocessConfig:
    train_fraction: float = 0.8
    max_modes: int = 10
    weight_threshold: float = 0.005


@dataclass(frozen=True)
class TrainingConfig:
    latent_dim: int = 128
    hidden: int = 256
    batch_size: int = 500
    epochs: int = 300
    lr: float = 2e-4
    gp_weight: float = 10.0
    dropout: float = 0.5
    tau: float = 0.2
    loss: str = "wgan-gp"
    weight_decay: float = 1e-6


@dataclass(frozen=True)
class EvaluationConfig:
    n_per_setting: int = 2000
    n_generated: int | None = None  # None: same size as the training split
    m: int = 1000  # two disjoint draws must fit in the default 3000-row corpus
    k: int = 2
    bins: int = 20
    dt_max_depth: int = 100
    mlp_hidden: int = 200
    mlp_max_iter: int = 500


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    train: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def scenario_config(self) -> ScenarioConfig:
        s = self.simulation
        return ScenarioConfig(s.load_scale_range, s.fault_position_range, s.clearing_time_range,
                              s.horizon, s.step, self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **dataclasses.asdict(self.train))

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, tuple):
                return list(v)
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            return v
        return plain(dataclasses.asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


# (lower, upper, lower-inclusive, upper-inclusive); None means unbounded
_RANGES = {
    "seed": (0, None, True, True),
    "simulation.n_samples": (1, None, True, True),
    "simulation.horizon": (0, None, False, True),
    "simulation.step": (0, 0.02, False, True),
    "simulation.workers": (1, None, True, True),
    "preprocess.train_fraction": (0, 1, False, False),
    "preprocess.max_modes": (1, None, True, True),
    "preprocess.weight_threshold": (0, 1, True, False),
    "train.latent_dim": (1, None, True, True),
    "train.hidden": (1, None, True, True),
    "train.batch_size": (2, None, True, True),
    "train.epochs": (0, None, True, True),
    "train.lr": (0, None, False, True),
    "train.gp_weight": (0, None, True, True),
    "train.dropout": (0, 1, True, False),
    "train.tau": (0, None, False, True),
    "train.weight_decay": (0, None, True, True),
    "evaluation.n_per_setting": (1, None, True, True),
    "evaluation.n_generated": (1, None, True, True),
    "evaluation.m": (1, None, True, True),
    "evaluation.k": (1, None, True, True),
    "evaluation.bins": (1, None, True, True),
    "evaluation.dt_max_depth": (0, None, True, True),
    "evaluation.mlp_hidden": (1, None, True, True),
    "evaluation.mlp_max_iter": (1, None, True, True),
}
_SCI_NUMBER = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)[eE][-+]?\d+")
_CHOICES = {"train.loss": ("wgan-gp", "minimax")}
_SPANS = {
    "simulation.load_scale_range": (0.60, 1.45),
    "simulation.fault_position_range": (0.20, 0.80),
    "simulation.clearing_time_range": (1.0 / 60.0, 1.0 / 3.0),
}


def _describe(tp) -> str:
    if tp is float:
        return "a number"
    if tp is int:
        return "an integer"
    if tp is str:
        return "a string"
    return str(tp)


def _coerce(value, tp, path):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigError(f"{path}: expected a list of {len(args)} numbers, got {value!r}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if tp is float:
        if isinstance(value, str) and _SCI_NUMBER.fullmatch(value.strip()):
            # YAML 1.1 reads "1e-4" (no dot) as a string
            value = float(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected {_describe(tp)}, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{path}: expected a finite number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected {_describe(tp)}, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected {_describe(tp)}, got {value!r}")
        return value
    raise TypeError(f"unsupported config type {tp}")


def _check_range(path, value):
    if path in _RANGES and value is not None:
        lo, hi, lo_inc, hi_inc = _RANGES[path]
        ok = (lo is None or (value >= lo if lo_inc else value > lo)) and \
             (hi is None or (value <= hi if hi_inc else value < hi))
        if not ok:
            lo_s = "-inf" if lo is None else lo
            hi_s = "inf" if hi is None else hi
            raise ConfigError(f"{path}: {value!r} outside {'[' if lo_inc else '('}"
                              f"{lo_s}, {hi_s}{']' if hi_inc else ')'}")
    if path in _CHOICES and value not in _CHOICES[path]:
        raise ConfigError(f"{path}: expected one of {list(_CHOICES[path])}, got {value!r}")
    if path in _SPANS:
        lo, hi = _SPANS[path]
        a, b = value
        if not lo - 1e-12 <= a <= b <= hi + 1e-12:
            raise ConfigError(f"{path}: expected lo <= hi within [{lo:g}, {hi:g}], got {list(value)}")


def _build(cls, data, prefix=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or '<root>'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        where = f"{prefix}." if prefix else ""
        raise ConfigError(f"unknown key {where}{unknown[0]} (allowed: {', '.join(sorted(known))})")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        path = f"{prefix}.{f.name}" if prefix else f.name
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, data[f.name], path)
        else:
            value = _coerce(data[f.name], tp, path)
            _check_range(path, value)
            kwargs[f.name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> PipelineConfig:
    cfg = _build(PipelineConfig, data)
    s = cfg.simulation
    if s.horizon < s.clearing_time_range[1]:
        raise ConfigError("simulation.horizon: shorter than the longest clearing time")
    return cfg


def parse_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return config_from_dict(data or {})


def with_overrides(cfg: PipelineConfig, overrides: dict[str, object]) -> PipelineConfig:
    """Apply dotted-key overrides (``{"train.epochs": 10}``) and re-validate."""
    data = cfg.to_dict()
    for key, value in overrides.items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown key {key}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown key {key}")
        node[parts[-1]] = value
    return config_from_dict(data)
