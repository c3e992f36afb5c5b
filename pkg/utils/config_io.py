from __future__ import annotations

import configparser
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Type, TypeVar

from pydantic import BaseModel, ValidationError

from framework.errors import ConfigError

M = TypeVar("M", bound=BaseModel)

_DEFAULT_SECTION = "default"


def read_key_values(path: Path | str) -> Dict[str, str]:
    """Flatten a ``key = value`` file (optional ``[section]`` headers) into one dict."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if not text.lstrip().startswith("["):
        text = f"[{_DEFAULT_SECTION}]\n" + text
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    values: Dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in values:
                raise ConfigError(f"{path}: key '{key}' set twice", key=key)
            values[key] = value.strip()
    return values


def build_config(model: Type[M], values: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> M:
    """Validate raw values into ``model``; errors name the offending key."""
    merged: Dict[str, Any] = dict(values)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    try:
        return model.model_validate(merged)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = ".".join(str(part) for part in first.get("loc", ())) or "<config>"
        raise ConfigError(f"config key '{key}': {first.get('msg', 'invalid value')}", key=key) from exc


def load_config(model: Type[M], path: Path | str, overrides: Optional[Mapping[str, Any]] = None) -> M:
    return build_config(model, read_key_values(path), overrides)


def dump_key_values(config: BaseModel) -> str:
    lines = []
    for key, value in config.model_dump(mode="json").items():
        if value is None:
            continue
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
