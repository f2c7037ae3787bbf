from __future__ import annotations

import configparser
import hashlib
import json
import os
import typing
from typing import Any, Dict, Iterable, List, Optional, Type

from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from errors import ConfigError, MissingArtifactError
from logging_utils import log_event


class ExperimentConfig(BaseModel):
    """The fully resolved configuration of one command run."""

    command: str
    out: str
    seed: int = 0
    options: Dict[str, Any] = {}
    train: Optional[Dict[str, Any]] = None
    world: Optional[Dict[str, Any]] = None
    probe: Optional[Dict[str, Any]] = None

    def hashed_view(self) -> Dict[str, Any]:
        # The output location does not change what a run computes
        return self.dict(exclude={"out"})


def config_hash(cfg: ExperimentConfig) -> str:
    payload = json.dumps(cfg.hashed_view(), sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def read_config_file(path: str, section: str) -> Dict[str, str]:
    """
    Flat `key = value` lines grouped under `[command]` sections. Keys in a
    `[defaults]` section apply to every command; the command's section wins.
    """
    if not os.path.exists(path):
        raise MissingArtifactError(path, "a config file you write by hand")
    parser = configparser.ConfigParser(default_section="defaults", interpolation=None)
    parser.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values = dict(parser.defaults())
    if parser.has_section(section):
        values.update({k: v for k, v in parser.items(section)})
    return {key.replace("-", "_"): value.strip() for key, value in values.items()}


def parse_overrides(pairs: Optional[Iterable[str]]) -> Dict[str, str]:
    """`--set key=value` pairs."""
    values: Dict[str, str] = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def merge_layers(file_values: Dict[str, Any], overrides: Dict[str, Any], flags: Dict[str, Any]) -> Dict[str, Any]:
    """File values, then --set overrides, then explicit flags; unset flags (None) never win."""
    merged = dict(file_values)
    merged.update(overrides)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _is_list_field(model: Type[BaseModel], name: str) -> bool:
    outer = model.__fields__[name].outer_type_
    return typing.get_origin(outer) in (list, List)


def build_model_config(model: Type[BaseModel], values: Dict[str, Any]) -> BaseModel:
    """Instantiate `model` from the subset of `values` it declares; comma strings become lists."""
    picked: Dict[str, Any] = {}
    for name in model.__fields__:
        if name not in values:
            continue
        value = values[name]
        if isinstance(value, str) and _is_list_field(model, name):
            value = [part.strip() for part in value.split(",") if part.strip()]
        picked[name] = value
    try:
        return model(**picked)
    except PydanticValidationError as exc:
        raise ConfigError(f"invalid {model.__name__}: {_first_error(exc)}") from exc


def _first_error(exc: PydanticValidationError) -> str:
    err = exc.errors()[0]
    loc = ".".join(str(part) for part in err.get("loc", ()))
    return f"{loc}: {err.get('msg')}"


def check_known_keys(values: Dict[str, Any], known: Iterable[str], command: str) -> None:
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown setting(s) for {command}: {', '.join(unknown)}")


def parse_list(value: Any, cast=str) -> List[Any]:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [part.strip() for part in str(value).split(",") if part.strip()]
    try:
        return [cast(item) for item in items]
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {value!r}: {exc}") from exc


def parse_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def write_config(cfg: ExperimentConfig, out_dir: str) -> str:
    """
    Record the resolved configuration under `<out>/config.json`, one entry
    per command so several commands can share a run directory.
    """
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.json")
    existing: Dict[str, Any] = {}
    if os.path.exists(path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                existing = json.load(f)
        except (OSError, json.JSONDecodeError):
            log_event("CONFIG_FILE_REPLACED", path=path, reason="unreadable previous config.json")
            existing = {}
    entry = cfg.dict()
    entry["config_hash"] = config_hash(cfg)
    existing[cfg.command] = entry
    with open(path, "w", encoding="utf-8") as f:
        json.dump(existing, f, indent=2, sort_keys=True, default=str)
    return path
