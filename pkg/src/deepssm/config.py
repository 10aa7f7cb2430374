"""Run configuration: one JSON document drives every CLI verb.

Example::

    {
      "seed": 0,
      "output_dir": "out",
      "data": {"path": "data.csv", "time_features": ["hour_of_day"], "holdout": 96},
      "model": {"n_h": 32, "n_z": 4, "n_nn": 32, "K": 2, "use_ard": true},
      "train": {"window": 48, "batch_size": 4, "iterations": 500},
      "forecast": {"horizon": 24, "trials": 1000,
                   "exogenous": {"temp": {"kind": "gaussian", "max_std": 1.0}}},
      "evaluate": {"windows": 4, "baseline_period": 24}
    }

Unknown keys anywhere are rejected. Relative paths resolve against the
config file's directory.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .data import TIME_FEATURES
from .errors import ContractError
from .forecast import DEFAULT_LEVELS
from .model import ModelConfig
from .training import TrainConfig


def _strict(cls, raw: Mapping[str, Any], section: str):
    if not isinstance(raw, Mapping):
        raise ContractError(f"[{section}] must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ContractError(f"[{section}] unknown keys: {unknown}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ContractError(f"[{section}] {exc}") from None


@dataclass(frozen=True)
class DataSection:
    path: str
    time_features: list = field(default_factory=list)
    holdout: int = 0
    standardize: bool = True

    def __post_init__(self):
        bad = [f for f in self.time_features if f not in TIME_FEATURES]
        if bad:
            raise ContractError(f"[data] unknown time features {bad}; choose from {list(TIME_FEATURES)}")
        if self.holdout < 0:
            raise ContractError("[data] holdout must be >= 0")


@dataclass(frozen=True)
class ExogenousEntry:
    kind: str = "known"
    max_std: float = 1.0

    def __post_init__(self):
        if self.kind not in ("known", "gaussian"):
            raise ContractError(f"exogenous kind must be 'known' or 'gaussian', got {self.kind!r}")
        if self.max_std < 0:
            raise ContractError("exogenous max_std must be >= 0")


@dataclass(frozen=True)
class ForecastSection:
    horizon: int = 24
    trials: int = 1000
    levels: list = field(default_factory=lambda: list(DEFAULT_LEVELS))
    workers: int = 1
    exogenous: dict = field(default_factory=dict)
    standardized_output: bool = False

    def __post_init__(self):
        if self.horizon < 1 or self.trials < 1 or self.workers < 1:
            raise ContractError("[forecast] horizon, trials and workers must be >= 1")
        if not self.levels or any(not 0.0 < float(q) < 1.0 for q in self.levels):
            raise ContractError("[forecast] levels must be a non-empty list in (0, 1)")
        parsed = {name: _strict(ExogenousEntry, e, f"forecast.exogenous.{name}") for name, e in self.exogenous.items()}
        object.__setattr__(self, "exogenous", parsed)


@dataclass(frozen=True)
class EvaluateSection:
    windows: int = 4
    baseline_period: int = 24
    trials: int | None = None

    def __post_init__(self):
        if self.windows < 1 or self.baseline_period < 1:
            raise ContractError("[evaluate] windows and baseline_period must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    data: DataSection
    model: dict
    train: dict
    forecast: ForecastSection
    evaluate: EvaluateSection
    seed: int = 0
    output_dir: str = "out"
    checkpoint_every: int | None = None
    base_dir: Path = Path(".")

    def model_config(self, M: int, D: int) -> ModelConfig:
        return ModelConfig.from_dict({**self.model, "M": M, "D": D})

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.train, "seed": self.seed})

    def resolve(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        fc = asdict(self.forecast)
        return {
            "data": asdict(self.data),
            "model": dict(self.model),
            "train": dict(self.train),
            "forecast": fc,
            "evaluate": asdict(self.evaluate),
            "seed": self.seed,
            "output_dir": self.output_dir,
            "checkpoint_every": self.checkpoint_every,
        }

    def hash(self) -> str:
        """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None) -> "RunConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        if seed is not None:
            d["seed"] = seed
        if output_dir is not None:
            d["output_dir"] = output_dir
        return RunConfig(**d)


_TOP = {"data", "model", "train", "forecast", "evaluate", "seed", "output_dir", "checkpoint_every"}


def parse_config(raw: Mapping[str, Any], base_dir: str | Path = ".") -> RunConfig:
    """Validate a config mapping completely before anything runs."""
    if not isinstance(raw, Mapping):
        raise ContractError("config must be a JSON object")
    unknown = sorted(set(raw) - _TOP)
    if unknown:
        raise ContractError(f"unknown top-level config keys: {unknown}")
    if "data" not in raw:
        raise ContractError("config needs a [data] section")
    model = dict(raw.get("model", {}))
    for k in ("M", "D"):
        if k in model:
            raise ContractError(f"[model] {k} is inferred from the dataset; remove it")
    train = dict(raw.get("train", {}))
    if "seed" in train:
        raise ContractError("[train] seed is set at top level")
    # probe-construct with placeholder dims so bad values fail now
    ModelConfig.from_dict({**model, "M": 1, "D": 1})
    TrainConfig.from_dict(train)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ContractError("seed must be a non-negative integer")
    every = raw.get("checkpoint_every")
    if every is not None and (not isinstance(every, int) or every < 1):
        raise ContractError("checkpoint_every must be a positive integer")
    return RunConfig(
        data=_strict(DataSection, raw["data"], "data"),
        model=model,
        train=train,
        forecast=_strict(ForecastSection, raw.get("forecast", {}), "forecast"),
        evaluate=_strict(EvaluateSection, raw.get("evaluate", {}), "evaluate"),
        seed=seed,
        output_dir=str(raw.get("output_dir", "out")),
        checkpoint_every=every,
        base_dir=Path(base_dir),
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ContractError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ContractError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(raw, path.parent)
