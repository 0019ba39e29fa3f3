"""Scenario configuration: a nested YAML file mapped onto dataclasses.

Every key has a default, so a config file only lists what it changes.  Units
are part of the key names; the two logarithmic keys
(``channel.noise_psd_dbm_per_hz`` and ``channel.waterfall_threshold_db``) are
converted to linear values once, by :meth:`ChannelConfig.noise_psd` and
:meth:`ChannelConfig.waterfall_threshold`.  Ranges are written as
``[low, high]`` and drawn uniformly per device.

Example::

    scenario: {devices: 30, rounds: 200, scheme: ltfl}
    budgets: {t_max_s: 1500, e_max_j: 8}
    channel: {fading_coeff: 0.02}
"""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..bound import BoundConstants, ConfigurationError
from ..channel import FadingMode, db_to_linear, dbm_to_watts
from ..strategy import ControlLimits

SCHEMES = ("ltfl", "fedsgd", "signsgd", "stclite")


@dataclass
class ScenarioSection:
    name: str = "scenario"
    devices: int = 30
    rounds: int = 200
    seeds: list = field(default_factory=lambda: [0])
    scheme: str = "ltfl"
    target_accuracy: float = 0.85


@dataclass
class DataConfig:
    source: str = "blobs"  # "blobs" or "file"
    path: str | None = None
    delimiter: str = ","
    n_samples: int = 10_000
    n_features: int = 20
    n_classes: int = 10
    center_scale: float = 0.75
    cluster_std: float = 1.0
    test_fraction: float = 0.2
    partition: str = "iid"
    dirichlet_alpha: float = 0.1
    samples_per_device: list = field(default_factory=lambda: [400, 600])
    size_scale: str = "fit"
    seed: int | None = None  # defaults to the run seed


@dataclass
class ModelConfig:
    kind: str = "softmax"
    hidden: int = 32
    l2: float = 0.0
    init_scale: float | None = None


@dataclass
class ChannelConfig:
    bandwidth_hz: float = 1e7
    noise_psd_dbm_per_hz: float = -174.0
    waterfall_threshold_db: float = 0.023
    interference_w: list = field(default_factory=lambda: [1e-8, 2e-8])
    distance_m: list = field(default_factory=lambda: [100.0, 300.0])
    fading_coeff: float = 0.015
    fading_mode: str = "deterministic"
    mc_samples: int = 10_000

    def noise_psd(self) -> float:
        return float(dbm_to_watts(self.noise_psd_dbm_per_hz))

    def waterfall_threshold(self) -> float:
        return float(db_to_linear(self.waterfall_threshold_db))


@dataclass
class ComputeConfig:
    cpu_freq_hz: list = field(default_factory=lambda: [3e7, 1.1e8])
    cycles_per_sample: float = 2.7e8
    energy_coeff: float = 1.25e-26
    energy_exponent: float = 3.0


@dataclass
class BudgetConfig:
    t_max_s: float = 1500.0
    e_max_j: float = 8.0
    server_time_s: float = 0.05
    xi_bits: int = 96


@dataclass
class LimitConfig:
    p_min_w: float = 0.01
    p_max_w: float = 0.1
    rho_max: float = 0.5
    delta_max: int = 8

    def limits(self) -> ControlLimits:
        return ControlLimits(self.p_min_w, self.p_max_w, self.rho_max, int(self.delta_max))


@dataclass
class BoundConfig:
    lipschitz: float = 10.0
    weight_bound_sq: float = 10.0
    upsilon1: float = 1.0
    upsilon2: float = 0.01
    learning_rate: float | None = None
    estimate: bool = False  # replace the constants by warm-up estimates

    def constants(self) -> BoundConstants:
        return BoundConstants(self.lipschitz, self.weight_bound_sq, self.upsilon1, self.upsilon2,
                              self.learning_rate)


@dataclass
class ControllerConfig:
    max_outer: int = 20
    tolerance: float = 1e-4
    bo_iterations: int = 50
    margin: float | None = None
    reoptimize_every_round: bool = False
    bit_search: bool = True  # false: one pruning-then-bits pass per stage


@dataclass
class BaselineConfig:
    signsgd_step: float = 0.01
    signsgd_rule: str = "mean"  # or "majority"
    stc_error_feedback: bool = True


_SECTIONS = {
    "scenario": ScenarioSection,
    "data": DataConfig,
    "model": ModelConfig,
    "channel": ChannelConfig,
    "compute": ComputeConfig,
    "budgets": BudgetConfig,
    "limits": LimitConfig,
    "bound": BoundConfig,
    "controller": ControllerConfig,
    "baselines": BaselineConfig,
}


@dataclass
class ScenarioConfig:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    compute: ComputeConfig = field(default_factory=ComputeConfig)
    budgets: BudgetConfig = field(default_factory=BudgetConfig)
    limits: LimitConfig = field(default_factory=LimitConfig)
    bound: BoundConfig = field(default_factory=BoundConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        s, d = self.scenario, self.data
        if s.devices < 1:
            raise ConfigurationError("need at least one device")
        if s.rounds < 0:
            raise ConfigurationError("rounds must be non-negative")
        if s.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {s.scheme!r}; choose from {SCHEMES}")
        if d.partition not in ("iid", "dirichlet"):
            raise ConfigurationError(f"unknown partition {d.partition!r}")
        if not d.dirichlet_alpha > 0:
            raise ConfigurationError("Dirichlet concentration must be positive")
        if not 0 < d.test_fraction < 1:
            raise ConfigurationError("test_fraction must lie in (0, 1)")
        for name, rng in (("data.samples_per_device", d.samples_per_device),
                          ("channel.interference_w", self.channel.interference_w),
                          ("channel.distance_m", self.channel.distance_m),
                          ("compute.cpu_freq_hz", self.compute.cpu_freq_hz)):
            lo, hi = _as_range(rng)
            if lo > hi or lo < 0 or (name != "channel.interference_w" and lo <= 0):
                raise ConfigurationError(f"{name} must be a positive [low, high] range")
        FadingMode(self.channel.fading_mode)
        if self.baselines.signsgd_rule not in ("mean", "majority"):
            raise ConfigurationError("signsgd_rule must be 'mean' or 'majority'")
        self.limits.limits()
        self.bound.constants()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, overrides: dict[str, Any]) -> "ScenarioConfig":
        """Copy with dotted-key overrides such as ``{"channel.fading_coeff": 0.02}``."""
        raw = self.to_dict()
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if section not in raw or name not in raw[section]:
                raise ConfigurationError(f"unknown config key {key!r}")
            raw[section][name] = copy.deepcopy(value)
        return from_dict(raw)


def _as_range(value) -> tuple[float, float]:
    if isinstance(value, (int, float)):
        return float(value), float(value)
    lo, hi = value
    return float(lo), float(hi)


def _coerce(value, default):
    # YAML reads "1e-8" (no dot) as a string; follow the default's type.
    if isinstance(value, str) and isinstance(default, (int, float)) and not isinstance(default, bool):
        try:
            return float(value) if isinstance(default, float) or "." in value or "e" in value.lower() else int(value)
        except ValueError:
            raise ConfigurationError(f"expected a number, got {value!r}") from None
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, list):
        return [_coerce(v, 0.0) if isinstance(v, str) else v for v in value]
    if isinstance(value, str) and default is None:
        try:
            return float(value)
        except ValueError:
            return value
    return value


def from_dict(raw: dict | None) -> ScenarioConfig:
    raw = raw or {}
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config sections {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        given = raw.get(name) or {}
        defaults = cls()
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(given) - names
        if extra:
            raise ConfigurationError(f"unknown keys in [{name}]: {sorted(extra)}")
        values = {k: _coerce(v, getattr(defaults, k)) for k, v in given.items()}
        sections[name] = cls(**values)
    return ScenarioConfig(**sections)


def load_config(path) -> ScenarioConfig:
    with open(Path(path)) as fh:
        raw = yaml.safe_load(fh)
    if raw is not None and not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return from_dict(raw)


def dump_config(config: ScenarioConfig, path) -> None:
    with open(Path(path), "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
