"""Experiment configuration (YAML) and the scenario grid."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .flood import DomainConfig, GevParams
from .likelihood import DataMode, PriorSpec
from .mcmc import SamplerConfig
from .model import DATA_GENERATING, ModelParams, ModelVariant

SUPPORTED_YEARS = (10, 25, 50)
SUPPORTED_PARCELS = (25, 50, 100)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionConfig:
    bridge_samples: int = 5_000
    waic_draws: int = 10_000
    ln_bf_thresholds: tuple = (1.0, 3.0, 5.0)


@dataclass(frozen=True)
class HindcastConfig:
    draws: int = 500
    prior_draws: int = 500
    quantiles: tuple = (5.0, 25.0, 50.0, 75.0, 95.0)


@dataclass(frozen=True)
class GridConfig:
    years: tuple = SUPPORTED_YEARS
    parcels: tuple = SUPPORTED_PARCELS
    modes: tuple = ("individual", "aggregate")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int | None = None
    out: str = "results"
    domain: DomainConfig = field(default_factory=DomainConfig)
    gev: GevParams = field(default_factory=GevParams)
    spin_up_years: int = 50
    data_generating: ModelParams = DATA_GENERATING
    grid: GridConfig = field(default_factory=GridConfig)
    variants: tuple = ("no_interactions", "spatial_interactions")
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    hindcast: HindcastConfig = field(default_factory=HindcastConfig)
    prior: PriorSpec = field(default_factory=PriorSpec)
    replicates: int = 1
    workers: int = 0
    custom: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.seed is None:
            raise ConfigError("a master seed is required (config key 'seed' or --seed)")
        if not self.custom:
            bad_y = [y for y in self.grid.years if y not in SUPPORTED_YEARS]
            bad_p = [p for p in self.grid.parcels if p not in SUPPORTED_PARCELS]
            if bad_y or bad_p:
                raise ConfigError(f"years {bad_y} / parcels {bad_p} outside the supported grid; set custom: true")
        for p in self.grid.parcels:
            if p not in self.domain.subdomain_sizes:
                raise ConfigError(f"no {p}-parcel subdomain configured (domain.subdomain_sizes)")
        for m in self.grid.modes:
            if m not in ("individual", "aggregate"):
                raise ConfigError(f"unknown data mode {m!r}")
        try:
            [ModelVariant.parse(v) for v in self.variants]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.spin_up_years < 9:
            raise ConfigError("spin_up_years must cover the ten-year flood window")
        return self

    @property
    def variant_list(self) -> list[ModelVariant]:
        return [ModelVariant.parse(v) for v in self.variants]

    @property
    def max_years(self) -> int:
        return max(self.grid.years)


def _build(cls, data, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw or {})
    nested = {
        "domain": DomainConfig,
        "gev": GevParams,
        "grid": GridConfig,
        "sampler": SamplerConfig,
        "selection": SelectionConfig,
        "hindcast": HindcastConfig,
    }
    kwargs = {}
    for key, value in raw.items():
        if key in nested:
            kwargs[key] = _build(nested[key], value, key)
        elif key == "prior":
            kwargs[key] = _build(PriorSpec, {k: tuple(v) for k, v in (value or {}).items()}, key)
        elif key == "data_generating":
            try:
                kwargs[key] = ModelParams(**value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"data_generating: {exc}") from None
        elif key == "variants":
            kwargs[key] = tuple(value)
        elif key in {f.name for f in fields(ExperimentConfig)}:
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown top-level key {key!r}")
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    return config_from_dict(raw or {})


def override(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    changes = {k: v for k, v in changes.items() if v is not None}
    if "burnin" in changes:
        cfg = replace(cfg, sampler=replace(cfg.sampler, burnin=changes.pop("burnin")))
    return replace(cfg, **changes)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def conv(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: conv(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, tuple):
            return [conv(v) for v in obj]
        return obj

    return conv(cfg)


@dataclass(frozen=True, order=True)
class Scenario:
    years: int
    parcels: int
    mode: str
    replicate: int = 0

    @property
    def id(self) -> str:
        base = f"{self.years}x{self.parcels}_{self.mode}"
        return base if self.replicate == 0 else f"{base}_r{self.replicate}"

    @property
    def data_mode(self) -> DataMode:
        return DataMode(self.mode)

    @property
    def flagged(self) -> bool:
        # the spatial model is too poorly constrained on the smallest domain
        return self.parcels <= 25


def scenario_grid(cfg: ExperimentConfig) -> list[Scenario]:
    out = []
    for p in cfg.grid.parcels:
        for y in cfg.grid.years:
            for m in cfg.grid.modes:
                for r in range(cfg.replicates):
                    out.append(Scenario(y, p, m, r))
    return out


def parse_only(text: str | None):
    """``YxP[:mode]`` filters, comma separated (e.g. ``50x100:individual``)."""
    if not text:
        return None
    rules = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        head, _, mode = part.replace("_", ":").partition(":")
        try:
            y, p = (int(v) for v in head.lower().split("x"))
        except ValueError:
            raise ConfigError(f"bad --only filter {part!r}; expected e.g. 50x100:individual") from None
        rules.append((y, p, mode or None))
    return rules


def filter_scenarios(scenarios, rules) -> list[Scenario]:
    if rules is None:
        return list(scenarios)
    return [s for s in scenarios
            if any(s.years == y and s.parcels == p and (m is None or m == s.mode) for y, p, m in rules)]
