"""Run configuration.

Config files are flat ``key = value`` text with dotted section keys::

    # comments start with '#'
    motionseg.patch_rows = 7
    gpreg.beta0 = 1, 1, 16, 0.1
    pipeline.split = prefix:0.6

Every default below can be overridden this way.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, get_type_hints

from trafficdt.errors import InputError
from trafficdt.gmmbase import GmmConfig
from trafficdt.synth import SynthConfig


@dataclass(frozen=True)
class MotionSegConfig:
    patch_rows: int = 7
    patch_cols: int = 7
    patch_len: int = 5
    stride_space: int = 4
    stride_time: int = 5
    n_states: int = 5
    n_components: int = 2
    max_iter: int = 20
    tol: float = 1e-4
    seed: int = 0


@dataclass(frozen=True)
class FeatureConfig:
    edge_threshold: float = 100.0


@dataclass(frozen=True)
class GpConfig:
    beta0: Optional[Tuple[float, float, float, float]] = None
    max_iter: int = 200
    grad_tol: float = 1e-5


@dataclass(frozen=True)
class PipelineConfig:
    rows: int = 160
    cols: int = 110
    split: str = "prefix:0.6"
    report_raw_mean: bool = False


@dataclass(frozen=True)
class Config:
    motionseg: MotionSegConfig = field(default_factory=MotionSegConfig)
    featex: FeatureConfig = field(default_factory=FeatureConfig)
    gpreg: GpConfig = field(default_factory=GpConfig)
    gmmbase: GmmConfig = field(default_factory=GmmConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def with_seed(self, seed: int) -> "Config":
        return dataclasses.replace(
            self,
            motionseg=dataclasses.replace(self.motionseg, seed=seed),
            synth=dataclasses.replace(self.synth, seed=seed),
        )


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(raw: str, hint, key: str):
    raw = raw.strip()
    origin = getattr(hint, "__origin__", None)
    args = getattr(hint, "__args__", ())
    if origin is not None and type(None) in args:  # Optional[X]
        if raw.lower() in ("", "none"):
            return None
        hint = next(a for a in args if a is not type(None))
        origin = getattr(hint, "__origin__", None)
        args = getattr(hint, "__args__", ())
    try:
        if origin in (tuple, Tuple):
            parts = [p for p in raw.replace(",", " ").split()]
            return tuple(_coerce(p, args[0], key) for p in parts)
        if hint is bool:
            if raw.lower() in _TRUE:
                return True
            if raw.lower() in _FALSE:
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        return raw
    except (ValueError, StopIteration) as exc:
        raise InputError(f"config key {key}: cannot parse {raw!r}") from exc


def apply_overrides(config: Config, items: dict) -> Config:
    sections = {}
    for key, raw in items.items():
        if key.count(".") != 1:
            raise InputError(f"config key {key!r} must look like section.name")
        section, name = key.split(".")
        if not hasattr(config, section):
            raise InputError(f"unknown config section {section!r}")
        sub = getattr(config, section)
        hints = get_type_hints(type(sub))
        if name not in hints:
            raise InputError(f"unknown config key {key!r}")
        sections.setdefault(section, {})[name] = _coerce(raw, hints[name], key)
    for section, values in sections.items():
        try:
            config = dataclasses.replace(
                config, **{section: dataclasses.replace(getattr(config, section), **values)}
            )
        except (TypeError, ValueError) as exc:
            raise InputError(f"config section {section}: {exc}") from exc
    return config


def parse_config(text: str, base: Optional[Config] = None) -> Config:
    items = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        items[key.strip()] = value
    return apply_overrides(base or Config(), items)


def load_config(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read config ({exc})") from exc
    return parse_config(text)


def dump_config(config: Config) -> str:
    lines = []
    for sec in dataclasses.fields(config):
        sub = getattr(config, sec.name)
        for f in dataclasses.fields(sub):
            v = getattr(sub, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{sec.name}.{f.name} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
