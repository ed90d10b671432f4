"""Plain ``key = value`` configuration files and seed resolution."""

from __future__ import annotations

import os
from pathlib import Path


class ConfigError(ValueError):
    pass


def read_config(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def resolve_seed(seed: int | None, default: int = 0) -> int:
    """Explicit seed, else ``TPR_SEED``, else ``default``."""
    if seed is not None:
        return int(seed)
    env = os.environ.get("TPR_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"TPR_SEED must be an integer, got {env!r}") from None
    return default
