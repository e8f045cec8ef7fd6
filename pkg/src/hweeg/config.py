"""Declarative pipeline configuration loaded from JSON.

Every field has a default; unknown keys are rejected by name.  Precedence:
built-in defaults < config file < command-line flags.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .decoder import EEGNetConfig, TrainConfig
from .epoching import OnsetDetectorConfig
from .errors import ConfigError, HweegError
from .evalharness import DEFAULT_FRACTIONS, DEFAULT_K_VALUES, DEFAULT_SEEDS, fingerprint
from .pipeline import PreprocessConfig

# network fields that are fixed by the data rather than configurable
_NET_DATA_FIELDS = ("n_channels", "n_samples")


@dataclass(frozen=True)
class EvalConfig:
    k: int = 5
    test_size: int = 160
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    k_values: tuple[int, ...] = DEFAULT_K_VALUES
    master_seed: int = 0
    jobs: int = 1


@dataclass(frozen=True)
class PipelineConfig:
    setting: str = "me_movement"
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    onset: OnsetDetectorConfig = field(default_factory=OnsetDetectorConfig)
    net: dict = field(default_factory=dict)        # EEGNetConfig overrides
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def net_config(self, n_channels: int, n_samples: int) -> EEGNetConfig:
        return EEGNetConfig(n_channels=n_channels, n_samples=n_samples, **self.net)

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())


_SECTIONS = {"preprocess": PreprocessConfig, "onset": OnsetDetectorConfig, "train": TrainConfig,
             "eval": EvalConfig}


def _build(cls, values: dict, prefix: str):
    known = {f.name: f for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown config key '{prefix}{key}'")
    kwargs = {}
    for key, val in values.items():
        kwargs[key] = tuple(val) if isinstance(val, list) else val
    try:
        return cls(**kwargs)
    except (TypeError, HweegError) as exc:
        raise ConfigError(f"invalid config section '{prefix.rstrip('.') or 'root'}': {exc}") from exc


def config_from_dict(d: dict) -> PipelineConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(PipelineConfig)}
    for key in d:
        if key not in top:
            raise ConfigError(f"unknown config key '{key}'")
    kwargs = {}
    for key, val in d.items():
        if key in _SECTIONS:
            if not isinstance(val, dict):
                raise ConfigError(f"config section '{key}' must be an object")
            kwargs[key] = _build(_SECTIONS[key], val, f"{key}.")
        elif key == "net":
            allowed = {f.name for f in fields(EEGNetConfig)} - set(_NET_DATA_FIELDS)
            bad = [k for k in val if k not in allowed]
            if bad:
                raise ConfigError(f"unknown config key 'net.{bad[0]}'")
            kwargs[key] = dict(val)
        else:
            kwargs[key] = val
    cfg = PipelineConfig(**kwargs)
    normalize_setting(cfg.setting)
    return cfg


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def override(cfg: PipelineConfig, section: str, **values) -> PipelineConfig:
    """Apply non-None flag values on top of a section."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    if section == "net":
        return replace(cfg, net={**cfg.net, **values})
    if section is None:
        return replace(cfg, **values)
    try:
        return replace(cfg, **{section: replace(getattr(cfg, section), **values)})
    except HweegError as exc:
        raise ConfigError(str(exc)) from exc


def normalize_setting(name: str) -> str:
    """Accept ``me-movement`` as well as ``me_movement``."""
    setting = name.replace("-", "_")
    if setting not in ("me_movement", "me_cue", "mi_cue"):
        raise ConfigError(f"unknown setting {name!r}")
    return setting
