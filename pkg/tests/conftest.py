"""Shared fixtures: small seeded ensembles and the markets built on them."""

from pathlib import Path

import numpy as np
import pytest

from duesenberry.equilibrium import EquilibriumInputs, ZeroEndowment, build_market
from duesenberry.flow_engine import FlowModel, TimeGrid, simulate_flow
from duesenberry.scenarios import build_scenario, desk_flow_model, desk_spec, log_linear_income
from duesenberry.population import PopulationMeasure
from duesenberry.utils.run_helpers import reset_settings


REPO_ROOT = Path(__file__).resolve().parent.parent

SMALL_PATHS = 200
SMALL_GRID = TimeGrid(0.0, 2.0, 40)


@pytest.fixture(autouse=True)
def fresh_settings():
    """Runtime settings are cached per process; tests may change the environment."""
    reset_settings()
    yield
    reset_settings()


@pytest.fixture(scope="session")
def desk_model() -> FlowModel:
    return desk_flow_model()


@pytest.fixture(scope="session")
def desk_ensemble(desk_model):
    spec = desk_spec("example51")
    return simulate_flow(desk_model, SMALL_GRID, spec.measure.points, SMALL_PATHS, seed=11)


@pytest.fixture(scope="session")
def example51_inputs():
    return build_scenario(desk_spec("example51"))


@pytest.fixture(scope="session")
def example51_market(example51_inputs, desk_ensemble):
    return build_market(example51_inputs, desk_ensemble)


@pytest.fixture(scope="session")
def example53_market(desk_ensemble):
    return build_market(build_scenario(desk_spec("example53")), desk_ensemble)


@pytest.fixture(scope="session")
def rentier_market():
    """One rentier type, γ = 0.02, I ≡ 1: H_t = e^{−0.02t} and P ≡ 50."""
    model = FlowModel.ornstein_uhlenbeck(mean_reversion=1.0, volatility=0.3,
                                         impatience_rate=0.02)
    measure = PopulationMeasure.discrete([[0.0]], [1.0])
    income, gradient = log_linear_income(0.0, 0.0)
    inputs = EquilibriumInputs.normalized(model, measure, income, np.array([1.0]),
                                          ZeroEndowment(), gradient)
    ensemble = simulate_flow(model, TimeGrid(0.0, 10.0, 200), measure.points, 150, seed=42)
    return build_market(inputs, ensemble)


@pytest.fixture
def small_config_text() -> str:
    return """
[flow_engine]
model = "desk"
horizon = 1.0
steps = 20
paths = 120
seed = 5

[population]
atoms = 3

[scenarios]
kind = "example51"
initial_share = [0.2, 0.3, 0.4]
decay = [0.01, 0.01, 0.01]
"""
