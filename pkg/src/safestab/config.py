"""Experiment configuration: YAML schema, defaults, validation.

A config file is a single YAML (or JSON) document.  Every key is optional;
an empty file yields the stock benchmark configuration (table defaults
plus the experiment overrides m_weight = 10).  Unknown keys are rejected
with the nearest valid key named.  Environment variables override exactly
two things: ``SAFESTAB_OUT`` (output directory) and ``SAFESTAB_SEED``
(top-level seed).
"""

from __future__ import annotations

import difflib
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Tuple

import yaml

from .acc import DEFAULT_MISMATCH_DRAG, AccParams, GpSettings, ScenarioKind

ENV_OUT = "SAFESTAB_OUT"
ENV_SEED = "SAFESTAB_SEED"


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending key path."""


@dataclass(frozen=True)
class IntegratorConfig:
    horizon: float = 70.0
    dt: float = 0.01

    def __post_init__(self):
        if self.horizon <= 0 or self.dt <= 0:
            raise ConfigError("integrator.horizon and integrator.dt must be positive")


@dataclass(frozen=True)
class GpConfig:
    q: int = 2000
    seed: Optional[int] = None  # None: fall back to the top-level seed
    noise_std: float = 1e-3
    signal_variance: float = 1e-3
    lengthscales: Tuple[float, ...] = (17.5, 17.5, 125.0)
    beta_override: Optional[Tuple[float, ...]] = (3.0, 3.0, 3.0)
    failure_prob: Optional[float] = None
    rkhs_norms: Optional[Tuple[float, ...]] = None
    information_gains: Optional[Tuple[float, ...]] = None
    dataset: Optional[str] = None  # CSV path; overrides data generation

    def __post_init__(self):
        if self.q < 1:
            raise ConfigError("gp.q must be at least 1")
        if self.noise_std < 0:
            raise ConfigError("gp.noise_std must be nonnegative")
        if self.beta_override is None:
            missing = self.failure_prob is None or self.rkhs_norms is None or self.information_gains is None
            if missing:
                raise ConfigError(
                    "gp: without beta_override, failure_prob, rkhs_norms and "
                    "information_gains are all required"
                )


@dataclass(frozen=True)
class ControlLimitsConfig:
    enabled: bool = False
    lower: Optional[float] = None  # default -0.5 * M * g when enabled
    upper: Optional[float] = None


@dataclass(frozen=True)
class ExperimentConfig:
    scenarios: Tuple[str, ...] = ("true_dynamics", "mismatched_dynamics", "gp_learned")
    seed: int = 0
    output_dir: str = "out"
    plots: bool = True
    acc: AccParams = field(default_factory=lambda: AccParams(m_weight=10.0))
    mismatch: Tuple[float, float, float] = DEFAULT_MISMATCH_DRAG
    gp: GpConfig = field(default_factory=GpConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    control_limits: ControlLimitsConfig = field(default_factory=ControlLimitsConfig)

    def __post_init__(self):
        for slug in self.scenarios:
            ScenarioKind.from_slug(slug)  # raises on unknown labels
        if "gp_learned" in self.scenarios and self.gp.dataset is None:
            if self.gp.seed is None and self.seed is None:
                raise ConfigError(
                    "gp_learned scenario needs a data source: set gp.dataset, "
                    "gp.seed, or the top-level seed"
                )

    @property
    def gp_seed(self) -> Optional[int]:
        return self.gp.seed if self.gp.seed is not None else self.seed

    def gp_settings(self, dataset=None) -> GpSettings:
        error_bound = None
        if self.gp.beta_override is None:
            from .gp import ErrorBoundConfig

            error_bound = ErrorBoundConfig(
                delta=self.gp.failure_prob,
                rkhs_norms=self.gp.rkhs_norms,
                information_gains=self.gp.information_gains,
            )
        return GpSettings(
            q=self.gp.q,
            seed=self.gp_seed if self.gp_seed is not None else 0,
            noise_std=self.gp.noise_std,
            signal_variance=self.gp.signal_variance,
            lengthscales=self.gp.lengthscales,
            beta_override=self.gp.beta_override,
            error_bound=error_bound,
            dataset=dataset,
        )


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


_SECTION_TYPES = ("acc", "gp", "integrator", "control_limits")

_TUPLE_KEYS = {
    "scenarios", "mismatch", "lengthscales", "beta_override",
    "rkhs_norms", "information_gains",
}


def _reject_unknown(mapping: dict, valid, path: str):
    for key in mapping:
        if key not in valid:
            hint = difflib.get_close_matches(str(key), list(valid), n=1)
            suggestion = f"; did you mean {hint[0]!r}?" if hint else ""
            raise ConfigError(f"unknown config key {path}{key!r}{suggestion}")


def _coerce(value, key: str):
    if value is None:
        return None
    if key in _TUPLE_KEYS:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"config key {key!r} must be a list")
        return tuple(value)
    return value


def _build_section(default_instance, mapping: dict, path: str):
    """Apply user overrides on top of the experiment-default section values."""
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"config section {path.rstrip('.')!r} must be a mapping")
    names = [f.name for f in fields(default_instance)]
    _reject_unknown(mapping, names, path)
    kwargs = {k: _coerce(v, k) for k, v in mapping.items()}
    try:
        return replace(default_instance, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid value in section {path.rstrip('.')!r}: {err}") from err


def config_from_mapping(raw: dict) -> ExperimentConfig:
    """Validate a parsed mapping against the schema and fill defaults."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top-level config must be a mapping")
    defaults = ExperimentConfig()
    top_names = [f.name for f in fields(ExperimentConfig)]
    _reject_unknown(raw, top_names, "")
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTION_TYPES:
            kwargs[key] = _build_section(getattr(defaults, key), value, f"{key}.")
        else:
            kwargs[key] = _coerce(value, key)
    try:
        cfg = ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid config value: {err}") from err
    return _apply_env(cfg)


def _apply_env(cfg: ExperimentConfig) -> ExperimentConfig:
    out = os.environ.get(ENV_OUT)
    seed = os.environ.get(ENV_SEED)
    if out:
        cfg = replace(cfg, output_dir=out)
    if seed:
        try:
            cfg = replace(cfg, seed=int(seed))
        except ValueError as err:
            raise ConfigError(f"{ENV_SEED} must be an integer: {seed!r}") from err
    return cfg


def parse_config(path) -> ExperimentConfig:
    """Load and validate a config file; empty file means full defaults."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"config file {path} is not valid YAML: {err}") from err
    return config_from_mapping(raw)


def config_to_mapping(cfg: ExperimentConfig) -> dict:
    """Plain-dict form of a config (inverse of :func:`config_from_mapping`)."""
    out = asdict(cfg)
    out["scenarios"] = list(cfg.scenarios)
    out["mismatch"] = list(cfg.mismatch)
    gp = out["gp"]
    for key in ("lengthscales", "beta_override", "rkhs_norms", "information_gains"):
        if gp.get(key) is not None:
            gp[key] = list(gp[key])
    return out


def write_config(cfg: ExperimentConfig, path) -> None:
    """Dump a config as YAML (round-trips through :func:`parse_config`)."""
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_mapping(cfg), fh, sort_keys=False)
