"""Run configuration from flat ``key = value`` files with dotted keys.

Example::

    seed = 7
    prune.mu = 5e-4
    prune.hidden = 128, 128
    fault.rate = 0.001
    sweep.methods = no_voting, voting

``RRAMFT_SEED`` in the environment overrides the default seed (an explicit
``seed`` key in the file still wins).
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .formats import loads_kv
from .ftol import FtConfig
from .prune import PruneConfig
from .quant import QuantConfig
from .xbar import FaultModel

SEED_ENV = "RRAMFT_SEED"

TABLE_RATES = (0.0001, 0.00025, 0.0005, 0.00075, 0.001, 0.00125, 0.0015, 0.00175, 0.002)
METHODS = ("no_voting", "voting", "voting_embedded")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    dim: int = 64
    classes: int = 4
    clusters_per_class: int = 4
    train: int = 4000
    test: int = 2000
    separation: float = 5.0
    noise: float = 1.0
    outlier_features: int = 0
    outlier_scale: float = 10.0


@dataclass(frozen=True)
class QuantSection:
    bits: int = 8

    def __post_init__(self):
        QuantConfig(self.bits)


@dataclass(frozen=True)
class FaultSection:
    rate: float = 0.001
    sa1_share: float = 9.04 / (9.04 + 1.75)

    def __post_init__(self):
        FaultModel(self.rate, self.sa1_share)


@dataclass(frozen=True)
class FtSection:
    candidates: int = 3
    flip: str = "msb_only"
    baseline_flip: str = "none"    # storage used by the no_voting method

    def __post_init__(self):
        FtConfig(self.candidates, self.flip)
        FtConfig(1, self.baseline_flip)


@dataclass(frozen=True)
class SweepSection:
    rates: tuple = TABLE_RATES
    trials: int = 30
    methods: tuple = ("no_voting", "voting")
    tolerance_drop: float = 10.0   # accuracy points

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("sweep.trials must be >= 1")
        if any(not 0.0 <= r <= 1.0 for r in self.rates):
            raise ConfigError("sweep.rates must lie in [0, 1]")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown sweep method(s) {bad}; choose from {METHODS}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    quant: QuantSection = field(default_factory=QuantSection)
    fault: FaultSection = field(default_factory=FaultSection)
    ft: FtSection = field(default_factory=FtSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def prune_config(self) -> PruneConfig:
        return dataclasses.replace(self.prune, seed=self.seed)


def _convert(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], bool):
                raise ValueError(raw)
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            if default and isinstance(default[0], float):
                return tuple(float(s) for s in items)
            return tuple(items)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def _section(cls, values: dict, prefix: str):
    defaults = cls()
    kwargs = {}
    names = {f.name for f in dataclasses.fields(cls)}
    for key, raw in values.items():
        if key not in names:
            raise ConfigError(f"unknown config key {prefix}.{key}")
        kwargs[key] = _convert(raw, getattr(defaults, key), f"{prefix}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{prefix}] {exc}") from None


def default_seed() -> int:
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None


def parse_config(text: str = "") -> RunConfig:
    flat = loads_kv(text)
    seed = default_seed()
    groups: dict[str, dict] = {}
    for key, raw in flat.items():
        if key == "seed":
            seed = _convert(raw, 0, "seed")
            continue
        if "." not in key:
            raise ConfigError(f"unknown config key {key}")
        section, name = key.split(".", 1)
        groups.setdefault(section, {})[name] = raw
    sections = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "seed"}
    kwargs = {"seed": seed}
    for section, values in groups.items():
        if section not in sections:
            raise ConfigError(f"unknown config section {section!r}")
        cls = type(sections[section].default_factory())
        kwargs[section] = _section(cls, values, section)
    return RunConfig(**kwargs)


def load_config(path=None) -> RunConfig:
    if path is None:
        return parse_config("")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    return parse_config(p.read_text())
