"""
Run configuration: TOML file -> validated, frozen pydantic models.

Sections mirror the package modules. Unknown keys are errors, the seed is
required, and every validation failure is reported as a ConfigError naming
the section, the key and the line of the TOML file it came from.

Example usage:
    from duesenberry.config import load_config

    config = load_config("configs/desk_example51.toml")
    spec = config.scenario_spec()
"""

import logging
import re
import tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from duesenberry.equilibrium import NestedSettings
from duesenberry.flow_engine import FlowModel, TimeGrid
from duesenberry.population import PopulationMeasure
from duesenberry.scenarios import (
    ScenarioSpec,
    desk_flow_model,
    desk_population,
    log_linear_income,
)
from duesenberry.utils.errors import ConfigError
from duesenberry.utils.run_helpers import config_hash


# Configure logging
logger = logging.getLogger(__name__)


SUITES = (
    "cocycles",
    "ito_aggregation",
    "brute_force_aggregation",
    "duality",
    "time_consistency",
    "rolling_limit",
    "clearing",
    "wealth_martingale",
    "no_arbitrage",
    "sigma_w_equals_theta",
    "labor_value",
    "joneses",
    "decomposition",
    "invariance",
)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class FlowEngineSection(_Section):
    model: Literal["desk", "ornstein_uhlenbeck"] = "desk"
    mean_reversion: float = Field(default=1.0, ge=0.0)
    volatility: List[float] = Field(default_factory=lambda: [0.3, 0.2], min_length=1)
    gamma_range: Tuple[float, float] = (0.01, 0.08)
    gamma_slope: float = 1.5
    gamma_center: float = 0.0
    growth_rate: float = 0.0
    t0: float = 0.0
    horizon: float = 10.0
    steps: int = Field(default=200, ge=1)
    paths: int = Field(default=1000, ge=1)
    seed: int = Field(ge=0)

    @model_validator(mode="after")
    def _check(self) -> "FlowEngineSection":
        lo, hi = self.gamma_range
        if not lo > 0:
            raise ValueError(f"gamma_range lower bound must be positive, got {lo}")
        if self.model == "desk" and not lo < hi:
            raise ValueError("desk model needs gamma_range = [low, high] with low < high")
        if self.model == "desk" and len(self.volatility) != 2:
            raise ValueError("desk model takes two volatility components")
        if self.model == "ornstein_uhlenbeck" and lo != hi:
            raise ValueError("ornstein_uhlenbeck has constant impatience; use gamma_range = [g, g]")
        if not self.horizon > self.t0:
            raise ValueError(f"horizon {self.horizon} must exceed t0 {self.t0}")
        return self

    def build_model(self) -> FlowModel:
        if self.model == "ornstein_uhlenbeck":
            return FlowModel.ornstein_uhlenbeck(
                mean_reversion=self.mean_reversion,
                volatility=self.volatility[0],
                impatience_rate=self.gamma_range[0],
                growth_rate=self.growth_rate,
            )
        return desk_flow_model(
            mean_reversion=self.mean_reversion,
            volatility=(self.volatility[0], self.volatility[1]),
            gamma_range=self.gamma_range,
            gamma_slope=self.gamma_slope,
            gamma_center=self.gamma_center,
            growth_rate=self.growth_rate,
        )

    def grid(self) -> TimeGrid:
        return TimeGrid(self.t0, self.horizon, self.steps)


class PopulationSection(_Section):
    atoms: int = Field(default=5, ge=1)
    spread: float = Field(default=1.0, gt=0.0)
    points: Optional[List[float]] = None
    weights: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check(self) -> "PopulationSection":
        if self.weights is not None:
            if self.points is None or len(self.weights) != len(self.points):
                raise ValueError("weights need explicit points of the same length")
            if any(w <= 0 for w in self.weights):
                raise ValueError("population weights must be positive")
        return self

    def build_measure(self) -> PopulationMeasure:
        if self.points is None:
            return desk_population(self.atoms, self.spread)
        points = np.asarray(self.points, dtype=float)[:, None]
        weights = (np.full(points.shape[0], 1.0 / points.shape[0]) if self.weights is None
                   else np.asarray(self.weights, dtype=float))
        return PopulationMeasure.discrete(points, weights)


class ScenariosSection(_Section):
    kind: Literal["rentier", "example51", "example53", "tabulated"] = "example51"
    income_level: float = 0.0
    income_slope: float = 0.5
    wealth_level: float = Field(default=50.0, gt=0.0)
    wealth_slope: float = 0.2
    initial_share: Optional[List[float]] = None
    decay: Optional[List[float]] = None
    floor_share: Optional[List[float]] = None
    flow_share: Optional[List[float]] = None
    flow_growth: Optional[List[float]] = None
    table_knots: Optional[List[float]] = None
    table_shares: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check(self) -> "ScenariosSection":
        if (self.table_knots is None) != (self.table_shares is None):
            raise ValueError("table_knots and table_shares go together")
        flow_form = (self.floor_share, self.flow_share, self.flow_growth)
        if any(v is not None for v in flow_form) and any(v is None for v in flow_form):
            raise ValueError("floor_share, flow_share and flow_growth go together")
        return self


class PreferencesSection(_Section):
    cases: int = Field(default=100, ge=1)
    alpha_range: Tuple[float, float] = (0.1, 0.9)
    beta_range: Tuple[float, float] = (0.005, 0.2)
    horizon: float = Field(default=10.0, gt=0.0)
    perturbation: float = Field(default=0.1, gt=0.0)

    @model_validator(mode="after")
    def _check(self) -> "PreferencesSection":
        a_lo, a_hi = self.alpha_range
        b_lo, b_hi = self.beta_range
        if not 0 < a_lo <= a_hi < 1:
            raise ValueError("alpha_range must lie inside (0, 1)")
        if not 0 < b_lo <= b_hi < 1:
            raise ValueError("beta_range must lie inside (0, 1)")
        return self


class EquilibriumSection(_Section):
    kappa_mode: Literal["auto", "analytic", "estimated"] = "auto"
    truncation_tolerance: float = Field(default=1e-8, gt=0.0, lt=1.0)
    estimate: bool = True
    inner_paths: int = Field(default=100, ge=2)
    inner_steps: int = Field(default=50, ge=1)
    inner_horizon: float = Field(default=20.0, gt=0.0)


class ValidationOracleSection(_Section):
    confidence_sigmas: float = Field(default=3.0, gt=0.0)
    pass_fraction: float = Field(default=0.95, gt=0.0, le=1.0)
    discretization_floor: float = Field(default=0.05, ge=0.0)
    rolling_meshes: List[float] = Field(default_factory=lambda: [0.1, 0.05, 0.025], min_length=3)
    rolling_paths: int = Field(default=200, ge=1)
    rolling_horizon: float = Field(default=1.0, gt=0.0)
    ito_factors: List[int] = Field(default_factory=lambda: [1, 2, 4, 8], min_length=3)
    brute_force_atoms: int = Field(default=10_000, ge=1)
    cocycle_index: Optional[int] = Field(default=None, ge=1)


class CliSection(_Section):
    out_dir: str = "runs"
    suites: List[str] = Field(default_factory=lambda: list(SUITES))
    log_file: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> "CliSection":
        unknown = sorted(set(self.suites) - set(SUITES))
        if unknown:
            raise ValueError(f"unknown verification suites {unknown}; choose from {list(SUITES)}")
        return self


class RunConfig(_Section):
    flow_engine: FlowEngineSection
    population: PopulationSection = Field(default_factory=PopulationSection)
    scenarios: ScenariosSection = Field(default_factory=ScenariosSection)
    preferences: PreferencesSection = Field(default_factory=PreferencesSection)
    equilibrium: EquilibriumSection = Field(default_factory=EquilibriumSection)
    validation_oracle: ValidationOracleSection = Field(default_factory=ValidationOracleSection)
    cli: CliSection = Field(default_factory=CliSection)

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        index = self.validation_oracle.cocycle_index
        if index is not None and index >= self.flow_engine.steps:
            raise ValueError(f"cocycle_index {index} must be below steps {self.flow_engine.steps}")
        scenarios = self.scenarios
        stochastic_price = scenarios.kind == "tabulated" or (
            scenarios.kind == "example53" and scenarios.floor_share is not None)
        if self.equilibrium.kappa_mode == "analytic" and stochastic_price:
            raise ValueError("kappa_mode = \"analytic\" needs a price proportional to total "
                             "wealth; use \"auto\" or \"estimated\" for this scenario")
        return self

    @property
    def seed(self) -> int:
        return self.flow_engine.seed

    @property
    def digest(self) -> str:
        return config_hash(self.model_dump(mode="json"))

    def with_seed(self, seed: int) -> "RunConfig":
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        return self.model_copy(
            update={"flow_engine": self.flow_engine.model_copy(update={"seed": seed})}
        )

    def nested_settings(self) -> NestedSettings:
        section = self.equilibrium
        return NestedSettings(
            inner_paths=section.inner_paths,
            inner_steps=section.inner_steps,
            inner_horizon=section.inner_horizon,
            seed=self.seed,
        )

    def scenario_spec(self) -> ScenarioSpec:
        """Scenario primitives; y and I are log-linear in the type."""
        section = self.scenarios
        measure = self.population.build_measure()
        income, gradient = log_linear_income(section.income_level, section.income_slope)
        x = measure.points[:, 0]

        def per_type(values: Optional[List[float]]) -> Optional[np.ndarray]:
            return None if values is None else np.asarray(values, dtype=float)

        table = None
        if section.table_knots is not None and section.table_shares is not None:
            table = (tuple(section.table_knots), tuple(section.table_shares))
        return ScenarioSpec(
            kind=section.kind,
            model=self.flow_engine.build_model(),
            measure=measure,
            income=income,
            income_gradient=gradient,
            y=section.wealth_level * np.exp(section.wealth_slope * x),
            initial_share=per_type(section.initial_share),
            decay=per_type(section.decay),
            floor_share=per_type(section.floor_share),
            flow_share=per_type(section.flow_share),
            flow_growth=per_type(section.flow_growth),
            table=table,
            nested=self.nested_settings(),
        )


# ==============================================================================
# Loading
# ==============================================================================

_SECTION_RE = re.compile(r"^\s*\[([^\[\]]+)\]\s*(#.*)?$")
_KEY_RE = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")
_TOML_LINE_RE = re.compile(r"line (\d+)")


def locate(text: str, section: Optional[str], key: Optional[str] = None) -> Optional[int]:
    """
    1-based line of `key` inside `[section]` (or of the section header).

    Returns None when neither is present in the text.
    """
    current: Optional[str] = None
    header_line: Optional[int] = None
    for number, line in enumerate(text.splitlines(), start=1):
        match = _SECTION_RE.match(line)
        if match:
            current = match.group(1).strip()
            if current == section:
                header_line = number
            continue
        if current == section and key is not None:
            key_match = _KEY_RE.match(line)
            if key_match and key_match.group(1) == key:
                return number
    return header_line


def _config_error(error: ValidationError, text: str) -> ConfigError:
    first = error.errors()[0]
    where = [str(part) for part in first["loc"]]
    section = where[0] if where else None
    key = where[1] if len(where) > 1 else None
    if section is None:
        return ConfigError(first["msg"])
    if first["type"] == "missing" and key is None and section is not None:
        # the section itself is absent
        return ConfigError(f"[{section}] section is required", locate(text, section))
    line = locate(text, section, key)
    if first["type"] == "extra_forbidden":
        label = f"unknown key '{key}' in [{section}]" if key else f"unknown section [{section}]"
        if key is None:
            line = locate(text, section)
        return ConfigError(label, line)
    label = f"[{section}] {key}" if key else f"[{section}]"
    return ConfigError(f"{label}: {first['msg']}", line)


def parse_config(text: str) -> RunConfig:
    """
    Validate TOML text.

    Raises:
        ConfigError: syntax errors, unknown keys, missing seed, bad values
    """
    try:
        raw: Dict[str, Any] = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        match = _TOML_LINE_RE.search(str(e))
        raise ConfigError(f"TOML syntax error: {e}",
                          int(match.group(1)) if match else None) from e
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise _config_error(e, text) from e
    logger.debug(f"config validated (hash {config.digest[:12]})")
    return config


def load_config(path: Union[str, Path]) -> RunConfig:
    """
    Read and validate a TOML run configuration.

    Raises:
        ConfigError: unreadable file or invalid content
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text)
