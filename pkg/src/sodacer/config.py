"""INI configuration: one section per component config, plus ``key=value`` overrides.

Precedence is command-line overrides, then the config file, then built-in
defaults. Values are typed from the dataclass defaults; tuples are written as
comma-separated lists and ``none`` clears an optional field.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .critic import CostConfig
from .dynamics import HpvParameters
from .errors import ConfigError
from .experiments import ExperimentConfig
from .optimizer import OptimizerConfig
from .replay import ReplayConfig
from .trainer import TrainerConfig

SECTIONS = {
    "hpv": HpvParameters,
    "cost": CostConfig,
    "replay": ReplayConfig,
    "optimizer": OptimizerConfig,
    "trainer": TrainerConfig,
    "experiment": ExperimentConfig,
}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _public_fields(cls):
    return [f for f in fields(cls) if f.init and not f.name.startswith("_")]


def _parse_scalar(text: str, kind: type):
    if kind is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return kind(text)


def parse_value(text: str, default):
    """Convert ``text`` to the type of ``default``."""
    text = text.strip()
    if default is None or isinstance(default, tuple):
        if default is None and text.lower() in ("", "none"):
            return None
        kind = type(default[0]) if default else float
        if kind is int:
            kind = float
        return tuple(_parse_scalar(p.strip(), kind) for p in text.split(",") if p.strip())
    return _parse_scalar(text, type(default))


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value).lower() if isinstance(value, bool) else str(value)


@dataclass(frozen=True)
class RunConfig:
    hpv: HpvParameters = field(default_factory=HpvParameters)
    cost: CostConfig = field(default_factory=CostConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def validate(self) -> None:
        for name in SECTIONS:
            getattr(self, name).validate()
        if tuple(self.replay.u_upper) != tuple(self.hpv.control_upper.tolist()):
            raise ConfigError("replay.u_upper must equal the hpv control caps (1, 1, u_max, u_max, alpha_max)")

    def to_dict(self) -> dict:
        return {name: {f.name: _jsonable(getattr(getattr(self, name), f.name))
                       for f in _public_fields(cls)}
                for name, cls in SECTIONS.items()}

    def to_ini(self) -> str:
        lines = []
        for name, cls in SECTIONS.items():
            lines.append(f"[{name}]")
            sec = getattr(self, name)
            lines.extend(f"{f.name} = {format_value(getattr(sec, f.name))}" for f in _public_fields(cls))
            lines.append("")
        return "\n".join(lines)


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def _apply(cfg: RunConfig, section: str, key: str, text: str, origin: str) -> RunConfig:
    if section not in SECTIONS:
        raise ConfigError(f"{origin}: unknown section [{section}]")
    cls = SECTIONS[section]
    names = {f.name for f in _public_fields(cls)}
    if key not in names:
        raise ConfigError(f"{origin}: unknown key {section}.{key}")
    current = getattr(cfg, section)
    try:
        value = parse_value(text, getattr(cls(), key))
    except ValueError as exc:
        raise ConfigError(f"{origin}: bad value for {section}.{key}: {exc}") from None
    return replace(cfg, **{section: replace(current, **{key: value})})


def parse_override(item: str) -> tuple[str, str, str]:
    key, sep, value = item.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot or not section or not name:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    return section, name, value


def load_config(path: str | Path | None = None, overrides=()) -> RunConfig:
    """Build a validated :class:`RunConfig` from defaults, an optional INI file and overrides."""
    cfg = RunConfig()
    explicit = set()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, text in parser.items(section):
                cfg = _apply(cfg, section, key, text, str(path))
                explicit.add((section, key))
    for item in overrides:
        section, key, text = parse_override(item)
        cfg = _apply(cfg, section, key, text, "override")
        explicit.add((section, key))
    if ("replay", "u_upper") not in explicit:
        cfg = replace(cfg, replay=replace(cfg.replay, u_upper=tuple(cfg.hpv.control_upper.tolist())))
    cfg.validate()
    return cfg
