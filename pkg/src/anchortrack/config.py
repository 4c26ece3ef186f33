"""Pipeline configuration: a strict YAML schema over the module configs.

The file mirrors the package layout — one section per stage::

    paths:   {data_root, checkpoints, results}
    seed:    training seed (the dataset keeps its own under synth.seed)
    synth:   dataset build (sequence counts, agent dynamics, proposal noise)
    motion:  pseudo-clip camera motion
    noise:   query-denoising box noise (lambda1/lambda2)
    train:   optimizer schedule, loss weights, clip mixing
    tracker: runtime thresholds and track time-to-live
    linker:  offline gap linking bounds
    eval:    which split to score

Unknown keys fail loudly with their dotted path, as do type mismatches.
Values may be overridden from the command line with ``section.key=value``
strings; the snapshot written to run manifests parses back to an identical
configuration.  Two train keys are derived rather than written directly:
``train.noise`` comes from the top-level ``noise`` section and ``train.seed``
from the top-level ``seed``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from .data import DatasetConfig, MotionConfig
from .denoise import NoiseConfig
from .errors import ConfigError
from .linker import LinkerConfig
from .tracker import TrackerConfig
from .training import TrainConfig

__all__ = [
    "PathsConfig", "EvalConfig", "PipelineConfig",
    "parse_config", "load_config", "apply_overrides", "config_snapshot",
]

EVAL_SPLITS = ("train", "val", "test")


@dataclass
class PathsConfig:
    data_root: str = "data"
    checkpoints: str = "runs"
    results: str = "results"


@dataclass
class EvalConfig:
    split: str = "val"

    def validate(self) -> None:
        if self.split not in EVAL_SPLITS:
            raise ConfigError(f"eval.split must be one of {EVAL_SPLITS}, got {self.split!r}")


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0
    synth: DatasetConfig = field(default_factory=DatasetConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    linker: LinkerConfig = field(default_factory=LinkerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        self.synth.validate()
        self.motion.validate()
        self.noise.validate()
        self.train.validate()
        self.tracker.validate()
        self.linker.validate()
        self.eval.validate()


# train keys populated from the top level, rejected if written explicitly.
_DERIVED_TRAIN_KEYS = {
    "noise": "the top-level 'noise' section",
    "seed": "the top-level 'seed' key",
}


def _coerce(default: Any, value: Any, path: str) -> Any:
    if is_dataclass(default):
        if not isinstance(value, Mapping):
            raise ConfigError(f"'{path}' expects a mapping of keys, got {value!r}")
        return _from_mapping(type(default), value, path)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{path}' expects a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{path}' expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        # YAML 1.1 reads "2e-4" as a string; accept numeric-looking strings.
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"'{path}' expects a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{path}' expects a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{path}' expects a list, got {value!r}")
        try:
            return tuple(float(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"'{path}' expects a list of numbers, got {value!r}") from None
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"'{path}' expects a string, got {value!r}")
        return value
    if default is None:  # optional integers (e.g. tracker.n_learn)
        if value is None or (isinstance(value, int) and not isinstance(value, bool)):
            return value
        raise ConfigError(f"'{path}' expects an integer or null, got {value!r}")
    raise ConfigError(f"'{path}' has unsupported config type {type(default).__name__}")


def _from_mapping(cls: type, data: Mapping, path: str) -> Any:
    base = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) under '{path}': {', '.join(unknown)}")
    updates = {
        name: _coerce(getattr(base, name), data[name], f"{path}.{name}")
        for name in known if name in data
    }
    return replace(base, **updates)


def parse_config(data: Mapping | None) -> PipelineConfig:
    """Build a validated :class:`PipelineConfig` from a nested mapping."""
    data = data or {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    train_section = data.get("train", {})
    if isinstance(train_section, Mapping):
        for key, source in _DERIVED_TRAIN_KEYS.items():
            if key in train_section:
                raise ConfigError(f"'train.{key}' is derived from {source}; set it there")
    cfg: PipelineConfig = _from_mapping(PipelineConfig, data, "config")
    cfg = replace(cfg, train=replace(cfg.train, noise=cfg.noise, seed=cfg.seed))
    cfg.validate()
    return cfg


def apply_overrides(data: Mapping | None, overrides: Iterable[str]) -> dict:
    """Set ``section.key=value`` pairs on a raw config mapping (copied)."""
    out: dict = copy.deepcopy(dict(data or {}))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        try:
            value = yaml.safe_load(raw) if raw else None
        except yaml.YAMLError as exc:
            raise ConfigError(f"could not parse override value {raw!r}: {exc}") from None
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r} descends into non-mapping '{part}'")
            node = nxt
        node[parts[-1]] = value
    return out


def load_config(path: str | Path | None, overrides: Iterable[str] = ()) -> PipelineConfig:
    """Read a YAML config file (optional) and apply dotted overrides."""
    data: Any = {}
    if path is not None:
        target = Path(path)
        if not target.is_file():
            raise ConfigError(f"config file not found: {target}")
        try:
            data = yaml.safe_load(target.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"could not parse '{target}': {exc}") from None
        if not isinstance(data, Mapping):
            raise ConfigError(f"'{target}' must contain a mapping at top level")
    return parse_config(apply_overrides(data, overrides))


def _plain(obj: Any) -> Any:
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    return obj


def config_snapshot(cfg: PipelineConfig) -> dict:
    """Nested plain-dict form that :func:`parse_config` accepts unchanged."""
    data = _plain(cfg)
    for key in _DERIVED_TRAIN_KEYS:
        data["train"].pop(key, None)
    return data
