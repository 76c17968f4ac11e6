"""Fail-closed YAML training configuration files."""
from __future__ import annotations

from pathlib import Path

import yaml

from .errors import ConfigError
from .trainer import TrainConfig


def load_config(path) -> TrainConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping of config keys")
    return TrainConfig.from_dict(raw)


def save_config(config: TrainConfig, path) -> None:
    data = {k: v for k, v in config.to_dict().items() if v is not None}
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False))
