"""
Run configuration: an optional YAML file overridden by command-line flags
"""

import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml
from pydantic import ValidationError as PydanticValidationError

from errors import ConfigError
from models import RunConfig

logger = logging.getLogger(__name__)


def _read_yaml(path: str, what: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return yaml.safe_load(handle)
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"{what} file {path} is not valid YAML: {e}") from None


def _describe(error: PydanticValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(part) for part in item.get("loc", ())) or "config"
        parts.append(f"{location}: {item.get('msg')}")
    return "; ".join(parts)


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Merge the YAML file (if any) with non-None overrides and validate"""
    values: Dict[str, Any] = {}
    if path:
        loaded = _read_yaml(path, "config")
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        values.update(loaded)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "generator" and isinstance(values.get("generator"), dict) and isinstance(value, dict):
            merged = dict(values["generator"])
            merged.update(value)
            values["generator"] = merged
        else:
            values[key] = value
    try:
        config = RunConfig(**values)
    except PydanticValidationError as e:
        raise ConfigError(f"invalid configuration: {_describe(e)}") from None
    logger.debug("Configuration loaded", extra={'config_file': path, 'mode': config.mode.value})
    return config


def load_directives(path: str) -> Dict[str, Tuple[str, ...]]:
    """Rule id -> split dimensions, from a YAML mapping of lists or comma strings"""
    loaded = _read_yaml(path, "directives")
    if not isinstance(loaded, dict):
        raise ConfigError(f"directives file {path} must map rule ids to dimension lists")
    directives = {}
    for rule_id, dimensions in loaded.items():
        if dimensions is None:
            dimensions = []
        elif isinstance(dimensions, str):
            dimensions = [part.strip() for part in dimensions.split(",") if part.strip()]
        if not isinstance(dimensions, list) or not all(isinstance(d, str) for d in dimensions):
            raise ConfigError(f"directive for rule {rule_id} must be a list of dimension names")
        directives[str(rule_id)] = tuple(dimensions)
    return directives


def output_path(config: RunConfig, name: str) -> Path:
    directory = Path(config.output)
    directory.mkdir(parents=True, exist_ok=True)
    return directory / name
