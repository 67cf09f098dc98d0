"""Plain ``key = value`` config files mapped onto dataclass fields."""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

__all__ = ["ConfigError", "read_config", "build"]


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        if key is not None:
            where += f" [{key}]"
        super().__init__(f"{where}: {message}" if where else message)
        self.key, self.line, self.path = key, line, path


def read_config(path):
    """Return ``{key: (raw value, line number)}``; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno, path=path)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=lineno, path=path)
        if key in out:
            raise ConfigError("duplicate key", key=key, line=lineno, path=path)
        out[key] = (value, lineno)
    return out


def _convert(value: str, tp):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value.lower() in ("none", ""):
            return None
        (inner,) = [a for a in args if a is not type(None)]
        return _convert(value, inner)
    if origin is tuple:
        parts = [p.strip() for p in value.split(",")]
        return tuple(_convert(p, args[0]) for p in parts)
    if tp is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if tp is int:
        return int(value)
    if tp is float:
        return float(value)
    return value


def build(cls, entries, path=None, allowed_extra=(), **overrides):
    """Instantiate dataclass ``cls`` from parsed entries.

    Keys not naming a field of ``cls`` (and not in ``allowed_extra``) are
    rejected. Returns ``(instance, extras)``.
    """
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs, extras = {}, {}
    for key, (value, lineno) in entries.items():
        if key in allowed_extra:
            extras[key] = value
            continue
        if key not in names:
            raise ConfigError("unknown key", key=key, line=lineno, path=path)
        try:
            kwargs[key] = _convert(value, hints[key])
        except ValueError as exc:
            raise ConfigError(str(exc), key=key, line=lineno, path=path) from None
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as exc:
        bad = next((k for k in kwargs if k in str(exc)), None)
        line = entries[bad][1] if bad in entries else None
        raise ConfigError(str(exc), key=bad, line=line, path=path) from None
    return obj, extras
