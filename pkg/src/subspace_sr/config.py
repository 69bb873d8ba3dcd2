"""INI run configuration mapped onto the training/evaluation dataclasses.

Each section of the file corresponds to one dataclass; every key can also be
set from the command line as ``--section.key VALUE``.
"""

from __future__ import annotations

import configparser
import typing
from dataclasses import dataclass, field, fields, replace

from .evaluation import EvalOptions
from .trainer import ConfigError, TrainConfig


@dataclass(frozen=True)
class RunConfig:
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)

    def section(self, name: str):
        if name == "eval":
            return self.eval
        return getattr(self.training, name)


def section_types() -> dict[str, type]:
    out = {f.name: f.default_factory().__class__ for f in fields(TrainConfig)}
    out["eval"] = EvalOptions
    return out


def parse_value(raw: str, kind, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if typing.get_origin(kind) is tuple:
            return tuple(float(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def iter_keys():
    """Yield ``(section, key, type, default)`` for every config key."""
    for section, cls in section_types().items():
        hints = typing.get_type_hints(cls)
        default = cls()
        for f in fields(cls):
            yield section, f.name, hints[f.name], getattr(default, f.name)


def build(file_values: dict[str, dict[str, str]],
          overrides: dict[str, dict[str, str]]) -> RunConfig:
    """Combine defaults, file values and overrides (flags win)."""
    types = {(s, k): t for s, k, t, _ in iter_keys()}
    merged: dict[str, dict] = {s: {} for s in section_types()}
    for source in (file_values, overrides):
        for section, values in source.items():
            if section not in merged:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in values.items():
                if (section, key) not in types:
                    raise ConfigError(f"unknown config key {section}.{key}")
                merged[section][key] = parse_value(raw, types[(section, key)],
                                                   f"{section}.{key}")
    try:
        training = TrainConfig.from_dict({k: v for k, v in merged.items() if k != "eval"})
        evalopts = replace(EvalOptions(), **merged["eval"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(training, evalopts)


def read_ini(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    return {s: dict(parser.items(s)) for s in parser.sections()}


def load(path=None, overrides=None) -> RunConfig:
    return build(read_ini(path) if path else {}, overrides or {})


def to_ini(config: RunConfig) -> str:
    lines = []
    for section in section_types():
        lines.append(f"[{section}]")
        obj = config.section(section)
        for f in fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        lines.append("")
    return "\n".join(lines)
