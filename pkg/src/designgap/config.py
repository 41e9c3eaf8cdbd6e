"""Run configuration: INI sections mapped onto the library's config dataclasses.

Sections are ``[market]``, ``[model]``, ``[gaps]`` and ``[experiment]``; each
key must name a field of the matching dataclass. Tuples are written
comma-separated (an empty value means the empty tuple). The seed is not part
of any section: it is global and passed separately.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
import typing
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Tuple

from .model import ModelConfig
from .synthetic import MarketConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GapSettings:
    """Sampler settings; thresholds are calibrated unless given explicitly."""

    q: float = 95.0
    r: float = 50.0
    gamma1: Optional[float] = None
    gamma2: Optional[float] = None
    gamma_s: Optional[float] = None
    early_termination: bool = True
    c_sub: Optional[int] = None
    min_agreement: float = 0.9
    n_probe: int = 100
    n_candidates: int = 300
    n_importance: int = 64
    baseline: str = "uniform"

    def __post_init__(self):
        if not (0 <= self.q <= 100 and 0 <= self.r <= 100):
            raise ValueError("percentiles must lie in [0, 100]")
        if self.baseline not in ("uniform", "share"):
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.n_candidates < 1 or self.n_importance < 1:
            raise ValueError("n_candidates and n_importance must be >= 1")


@dataclass(frozen=True)
class ExperimentSettings:
    n_seeds: int = 1
    choice_floor: float = 0.25
    n_probes: int = 100
    feasibility_samples: int = 64

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    market: MarketConfig = field(default_factory=MarketConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    gaps: GapSettings = field(default_factory=GapSettings)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)


SECTIONS = {"market": MarketConfig, "model": ModelConfig, "gaps": GapSettings,
            "experiment": ExperimentSettings}
_SKIP = {"seed"}


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls) if f.name not in _SKIP}


def _parse_value(raw: str, tp, key: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union and type(None) in args:
        if raw.lower() in ("", "none"):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _parse_value(raw, inner, key)
    if origin in (tuple, Tuple):
        elem = args[0] if args else float
        parts = [p for p in raw.split(",") if p.strip()]
        return tuple(_parse_value(p, elem, key) for p in parts)
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    raise ConfigError(f"unsupported type for {key!r}")


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "inf" if math.isinf(v) and v > 0 else repr(v)
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    return str(v)


def parse_config(text: str) -> RunConfig:
    """Parse INI text; unknown sections or keys raise :class:`ConfigError`."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    parts = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown config section [{sec}]")
        types = _field_types(SECTIONS[sec])
        kw = {}
        for key, raw in cp.items(sec):
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            kw[key] = _parse_value(raw, types[key], key)
        try:
            parts[sec] = SECTIONS[sec](**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{sec}]: {exc}") from None
    return RunConfig(**parts)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: RunConfig, seed: int) -> str:
    """Resolved configuration as INI text; the global seed goes in a leading comment."""
    out = io.StringIO()
    out.write(f"# seed = {seed}\n")
    for sec in SECTIONS:
        obj = getattr(cfg, sec)
        out.write(f"\n[{sec}]\n")
        for f in fields(obj):
            if f.name in _SKIP:
                continue
            out.write(f"{f.name} = {_format_value(getattr(obj, f.name))}\n")
    return out.getvalue()


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """Market and model seeds follow the global seed."""
    return replace(cfg, market=replace(cfg.market, seed=seed), model=replace(cfg.model, seed=seed))


def override(obj, **kw):
    """``dataclasses.replace`` that ignores ``None`` values (unset flags)."""
    kw = {k: v for k, v in kw.items() if v is not None}
    if not kw:
        return obj
    try:
        return dataclasses.replace(obj, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
