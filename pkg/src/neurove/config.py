"""Flat dotted-key run configuration.

A config file holds one ``key = value`` pair per line; ``#`` starts a comment.
Values are parsed as JSON when possible (numbers, booleans, lists, quoted
strings) and otherwise kept as bare strings::

    seed = 3
    sine.lr = 0.003
    sine.baseline = slstm
    data.synthetic.n_train = 200

Resolution order is defaults, then the file, then command-line overrides.
Unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import fields, is_dataclass
from pathlib import Path
from typing import Any


class ConfigFileError(ValueError):
    pass


def parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def format_value(value: Any) -> str:
    if isinstance(value, str):
        # keep bare words readable, quote anything JSON would misread
        try:
            json.loads(value)
        except json.JSONDecodeError:
            if value and value.strip() == value:
                return value
        return json.dumps(value)
    return json.dumps(value)


def read_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{source}:{lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        key = key.strip()
        if not key or any(c.isspace() for c in key):
            raise ConfigFileError(f"{source}:{lineno}: bad key {key!r}")
        out[key] = parse_value(val)
    return out


def read_config(path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc}") from None
    return read_config_text(text, str(path))


def write_config(cfg: dict[str, Any], path) -> None:
    lines = [f"{k} = {format_value(v)}" for k, v in sorted(cfg.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def dataclass_defaults(prefix: str, cls) -> dict[str, Any]:
    assert is_dataclass(cls)
    out = {}
    for f in fields(cls):
        default = cls.__dataclass_fields__[f.name].default
        if isinstance(default, tuple):
            default = list(default)
        out[f"{prefix}.{f.name}"] = default
    return out


def section(cfg: dict[str, Any], prefix: str) -> dict[str, Any]:
    """Keys under ``prefix.`` with the prefix stripped (one level only)."""
    p = prefix + "."
    return {k[len(p) :]: v for k, v in cfg.items() if k.startswith(p) and "." not in k[len(p) :]}


def resolve(defaults: dict[str, Any], *layers: dict[str, Any]) -> dict[str, Any]:
    out = dict(defaults)
    for layer in layers:
        for k, v in layer.items():
            if k not in defaults:
                raise ConfigFileError(f"unknown config key {k!r}")
            out[k] = v
    return out


def parse_overrides(items: list[str] | None) -> dict[str, Any]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigFileError(f"override {item!r} must look like key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v)
    return out
