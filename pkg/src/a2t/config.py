"""Flat ``key = value`` config files with ``[section]`` headers.

Grammar (a subset of INI as read by :mod:`configparser`)::

    # comment
    [section]
    key = value

Values are coerced to the type of the matching dataclass field.  Tuples
are comma separated (``hidden = 32, 32``; an empty value is the empty
tuple); lists of pairs or triples are separated by ``;`` (``starts = 0,0;
0,11``).  ``none`` maps to ``None`` and ``true``/``false`` to booleans.
Keys that do not name a field are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .environments import EnvConfig, catch_config, chain_config, puddle1_config, puddle2_config


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


ENV_FACTORIES = {"chain": chain_config, "puddle1": puddle1_config, "puddle2": puddle2_config,
                 "catch": catch_config}


def read_config(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(path.read_text(), source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    return cp


def parse_config_text(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    return cp


def check_keys(section: str, items: dict, allowed) -> None:
    unknown = sorted(set(items) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_tuple(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    if ";" in text:
        return tuple(parse_tuple(part) for part in text.split(";") if part.strip())
    return tuple(_number(v.strip()) for v in text.split(",") if v.strip())


def coerce(value: str, default, key: str = "?"):
    """Convert ``value`` to the type suggested by ``default``."""
    v = value.strip()
    try:
        if v.lower() == "none":
            return None
        if isinstance(default, bool):
            return parse_bool(v)
        if isinstance(default, int):
            return int(v)
        if isinstance(default, float):
            return float(v)
        if isinstance(default, tuple):
            return parse_tuple(v)
        if default is None:
            if v.lower() in ("true", "false"):
                return parse_bool(v)
            try:
                return _number(v)
            except ValueError:
                return v
        return v
    except ValueError as e:
        raise ConfigError(f"bad value for {key!r}: {value!r} ({e})") from None


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(format_value(x) for x in v)
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dataclass_from_items(cls, items: dict, section: str, base=None):
    """Build ``cls`` from string items, starting from ``base`` (or the defaults)."""
    names = {f.name: f for f in dataclasses.fields(cls)}
    check_keys(section, items, names)
    start = base if base is not None else cls()
    kw = {}
    for k, v in items.items():
        kw[k] = coerce(v, getattr(start, k), f"{section}.{k}")
    try:
        return dataclasses.replace(start, **kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}]: {e}") from None


def items_from_dataclass(obj, base=None) -> dict:
    """String items for the fields of ``obj`` that differ from ``base``."""
    base = base if base is not None else type(obj)()
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if v != getattr(base, f.name):
            out[f.name] = format_value(v)
    return out


_COMMON_ENV_KEYS = {"cap", "reward_sign", "seed"}
ENV_KEYS = {
    "chain": _COMMON_ENV_KEYS | {"length", "starts", "goal"},
    "puddle": _COMMON_ENV_KEYS | {"rows", "cols", "starts", "goal", "penalties", "step_reward", "goal_reward", "slip"},
    "catch": _COMMON_ENV_KEYS | {"rows", "cols", "mask", "target_offset"},
}


def _env_value(cfg_kind: str, key: str, raw: str):
    raw = raw.strip()
    tabular_pairs = cfg_kind.startswith("puddle")
    if key == "starts":
        if tabular_pairs:
            parts = [p for p in raw.split(";") if p.strip()]
            return tuple(tuple(int(x) for x in p.split(",")) for p in parts)
        return tuple(int(x) for x in raw.replace(";", ",").split(",") if x.strip())
    if key == "goal":
        return tuple(int(x) for x in raw.split(",")) if tabular_pairs else int(raw)
    if key == "penalties":
        parts = [p for p in raw.split(";") if p.strip()]
        return tuple((int(r), int(c), float(p)) for r, c, p in (q.split(",") for q in parts))
    return None


def env_from_items(items: dict, section: str = "env") -> EnvConfig:
    """Environment config: ``kind`` picks a preset, other keys override it."""
    items = dict(items)
    kind = items.pop("kind", "chain").strip()
    if kind not in ENV_FACTORIES:
        raise ConfigError(f"[{section}]: unknown environment kind {kind!r}")
    check_keys(section, items, ENV_KEYS["puddle" if kind.startswith("puddle") else kind])
    base = ENV_FACTORIES[kind]()
    kw = {}
    for k, v in items.items():
        try:
            special = _env_value(kind, k, v)
        except ValueError as e:
            raise ConfigError(f"bad value for {section}.{k}: {v!r} ({e})") from None
        kw[k] = special if special is not None else coerce(v, getattr(base, k), f"{section}.{k}")
    try:
        return dataclasses.replace(base, **kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}]: {e}") from None


def env_to_items(cfg: EnvConfig) -> dict:
    base = ENV_FACTORIES[cfg.kind]()
    out = {"kind": cfg.kind}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "kind" or v == getattr(base, f.name):
            continue
        if f.name == "starts" and cfg.kind.startswith("puddle"):
            out[f.name] = "; ".join(f"{r},{c}" for r, c in v)
        elif f.name == "goal" and cfg.kind.startswith("puddle"):
            out[f.name] = f"{v[0]},{v[1]}"
        elif f.name == "penalties":
            out[f.name] = "; ".join(f"{r},{c},{p!r}" for r, c, p in v)
        else:
            out[f.name] = format_value(v)
    return out


def write_config(path, sections: dict) -> Path:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for name, items in sections.items():
        cp[name] = {k: str(v) for k, v in items.items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        cp.write(fh)
    return path
