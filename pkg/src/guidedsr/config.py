"""Flat key=value run configuration files.

One assignment per line; blank lines and '#' comments are skipped. All
values stay strings until a typed accessor interprets them, so error
messages can name the offending key.
"""

from __future__ import annotations

from .errors import ContractError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config(path) -> dict:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ContractError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.split("#", 1)[0].strip()
            if not key:
                raise ContractError(f"{path}:{lineno}: empty key")
            if key in out:
                raise ContractError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out


def as_int(cfg: dict, key: str, default=None) -> int:
    if key not in cfg:
        if default is None:
            raise ContractError(f"missing required config key {key!r}")
        return default
    try:
        return int(cfg[key])
    except ValueError as e:
        raise ContractError(f"config key {key!r}: {cfg[key]!r} is not an integer") from e


def as_float(cfg: dict, key: str, default=None) -> float:
    if key not in cfg:
        if default is None:
            raise ContractError(f"missing required config key {key!r}")
        return default
    try:
        return float(cfg[key])
    except ValueError as e:
        raise ContractError(f"config key {key!r}: {cfg[key]!r} is not a number") from e


def as_bool(cfg: dict, key: str, default=None) -> bool:
    if key not in cfg:
        if default is None:
            raise ContractError(f"missing required config key {key!r}")
        return default
    v = cfg[key].lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ContractError(f"config key {key!r}: {cfg[key]!r} is not a boolean")


def as_str(cfg: dict, key: str, default=None) -> str:
    if key not in cfg:
        if default is None:
            raise ContractError(f"missing required config key {key!r}")
        return default
    return cfg[key]


def as_dims(cfg: dict, key: str, default=None) -> tuple:
    """'32x32' -> (32, 32)"""
    if key not in cfg:
        if default is None:
            raise ContractError(f"missing required config key {key!r}")
        return default
    raw = cfg[key]
    parts = raw.lower().split("x")
    if len(parts) != 2:
        raise ContractError(f"config key {key!r}: {raw!r} is not HxW")
    try:
        return (int(parts[0]), int(parts[1]))
    except ValueError as e:
        raise ContractError(f"config key {key!r}: {raw!r} is not HxW") from e


def as_int_pair(cfg: dict, key: str, default=None) -> tuple:
    """'32,64' -> (32, 64)"""
    if key not in cfg:
        if default is None:
            raise ContractError(f"missing required config key {key!r}")
        return default
    raw = cfg[key]
    parts = raw.split(",")
    if len(parts) != 2:
        raise ContractError(f"config key {key!r}: {raw!r} is not a,b")
    try:
        return (int(parts[0]), int(parts[1]))
    except ValueError as e:
        raise ContractError(f"config key {key!r}: {raw!r} is not a,b") from e
