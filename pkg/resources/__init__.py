from __future__ import annotations

from pathlib import Path

from framework.errors import ConfigError

RESOURCE_DIR = Path(__file__).resolve().parent


def resource_path(name: str) -> Path:
    """Path of a shipped config such as ``run_default.cfg``."""
    path = RESOURCE_DIR / name
    if not path.is_file():
        raise ConfigError(f"no shipped resource named {name}", key=name)
    return path
