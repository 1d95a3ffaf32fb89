"""Experiment configuration: typed sections, JSON files and dotted overrides."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

from dwenet.errors import ConfigError
from dwenet.model import PRESETS, ModelConfig
from dwenet.optim import ADAM_BETA2, ADAM_EPS, OneCycleSpec

logger = logging.getLogger(__name__)

DatasetKind = Literal["headlines", "sarc_pol", "sarc_main"]
SECTIONS = ("model", "optimizer", "data", "training")


@dataclass(frozen=True)
class OptimConfig:
    """Adam constants and the one-cycle schedule shape."""

    lr_max: float = 1e-3
    weight_decay: float = 1e-2
    decoupled_weight_decay: bool = True
    pct_up: float = 0.3
    div: float = 25.0
    final_div: float = 1e4
    mom_high: float = 0.8
    mom_low: float = 0.7
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    def __post_init__(self) -> None:
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative", "optimizer.weight_decay")
        if not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("beta2 must lie in [0, 1)", "optimizer.beta2")
        try:
            self.schedule(1)
        except ValueError as exc:
            raise ConfigError(str(exc), "optimizer") from exc

    def schedule(self, total_steps: int) -> OneCycleSpec:
        return OneCycleSpec(
            total_steps=total_steps,
            lr_max=self.lr_max,
            pct_up=self.pct_up,
            div=self.div,
            final_div=self.final_div,
            mom_high=self.mom_high,
            mom_low=self.mom_low,
        )


@dataclass(frozen=True)
class DataConfig:
    """
    Dataset and embedding sources.

    Headlines reads one JSONL file (`path`) and splits it; the SARC variants
    read pre-split TSV files (`train_path`, `test_path`). Without an
    `embeddings` file the vectors are random.
    """

    dataset: DatasetKind = "headlines"
    path: Optional[str] = None
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    embeddings: Optional[str] = None
    test_frac: float = 0.2
    split_seed: int = 42
    min_freq: int = 1

    def __post_init__(self) -> None:
        if self.dataset not in typing.get_args(DatasetKind):
            raise ConfigError(f"unknown dataset: {self.dataset!r}", "data.dataset")
        if not 0.0 <= self.test_frac < 1.0:
            raise ConfigError("test_frac must lie in [0, 1)", "data.test_frac")
        if self.min_freq < 1:
            raise ConfigError("min_freq must be at least 1", "data.min_freq")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    runs: int = 20
    train_subset: Optional[int] = None
    allow_long_running: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative", "training.epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive", "training.batch_size")
        if self.runs < 1:
            raise ConfigError("runs must be positive", "training.runs")
        if self.train_subset is not None and self.train_subset < 1:
            raise ConfigError("train_subset must be positive", "training.train_subset")


@dataclass(frozen=True)
class TrainConfig:
    """Complete experiment description; every run is reproducible from it."""

    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model.to_dict(),
            "optimizer": dataclasses.asdict(self.optimizer),
            "data": dataclasses.asdict(self.data),
            "training": dataclasses.asdict(self.training),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "TrainConfig":
        """Build from nested sections; unknown sections or keys are rejected."""
        if not isinstance(raw, Mapping):
            raise ConfigError("config root must be a JSON object")
        for section in raw:
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section: {section}", section)
        model_raw = dict(_section(raw, "model"))
        preset_name = model_raw.pop("preset", None)
        if preset_name is not None:
            if not isinstance(preset_name, str) or preset_name not in PRESETS:
                raise ConfigError(
                    f"unknown preset {preset_name!r}; choose from {sorted(PRESETS)}",
                    "model.preset",
                )
            model_raw = {**PRESETS[preset_name], **model_raw}
        return cls(
            model=_build(ModelConfig, "model", model_raw),
            optimizer=_build(OptimConfig, "optimizer", _section(raw, "optimizer")),
            data=_build(DataConfig, "data", _section(raw, "data")),
            training=_build(TrainingConfig, "training", _section(raw, "training")),
        )


def _section(raw: Mapping[str, Any], name: str) -> Mapping[str, Any]:
    value = raw.get(name, {})
    if not isinstance(value, Mapping):
        raise ConfigError(f"section {name} must be a JSON object", name)
    return value


def _build(cls: Any, section: str, values: Mapping[str, Any]) -> Any:
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    kwargs: Dict[str, Any] = {}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"unknown key: {section}.{key}", f"{section}.{key}")
        kwargs[key] = _coerce(value, hints[key], f"{section}.{key}")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}", section) from exc


def _coerce(value: Any, hint: Any, key: str) -> Any:
    """Check a JSON value against a field annotation, converting lists to tuples."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], key)
    if origin is Literal:
        if value not in args:
            raise ConfigError(f"{key} must be one of {list(args)}, got {value!r}", key)
        return value
    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list, got {type(value).__name__}", key)
        return tuple(_coerce(v, args[0], key) for v in value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean, got {value!r}", key)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}", key)
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}", key)
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}", key)
        return value
    return value


def parse_override(text: str) -> Tuple[List[str], Any]:
    """
    Parse `section.key=value`. The value is read as a JSON literal, falling
    back to the raw string (so `data.path=foo.jsonl` needs no quotes).
    """
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    key, raw_value = text.split("=", 1)
    path = [part for part in key.strip().split(".") if part]
    if len(path) != 2:
        raise ConfigError(f"override key must be section.key, got {key!r}", key)
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    return path, value


def apply_overrides(raw: Mapping[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    merged: Dict[str, Any] = {k: dict(v) if isinstance(v, Mapping) else v for k, v in raw.items()}
    for text in overrides:
        (section, key), value = parse_override(text)
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section: {section}", section)
        target = merged.setdefault(section, {})
        if not isinstance(target, dict):
            raise ConfigError(f"section {section} must be a JSON object", section)
        target[key] = value
    return merged


def load_config(path: str | Path | None = None, overrides: Sequence[str] = ()) -> TrainConfig:
    """
    Read a JSON config, apply dotted overrides and validate.

    An absent file (or `{}`) yields the full dweNet defaults.

    Raises:
        ConfigError: Unreadable file, unknown key or mistyped value
    """
    raw: Mapping[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(raw, Mapping):
            raise ConfigError(f"{path}: config root must be a JSON object")
    config = TrainConfig.from_dict(apply_overrides(raw, overrides))
    logger.debug("Loaded config from %s with %d override(s)", path or "<defaults>", len(overrides))
    return config


def resolve_workers(requested: Optional[int] = None) -> int:
    """Worker process count: explicit value, else DWENET_THREADS, else 1."""
    if requested is not None:
        return max(1, requested)
    env = os.environ.get("DWENET_THREADS", "").strip()
    if not env:
        return 1
    try:
        return max(1, int(env))
    except ValueError as exc:
        raise ConfigError(
            f"DWENET_THREADS must be an integer, got {env!r}", "DWENET_THREADS"
        ) from exc
