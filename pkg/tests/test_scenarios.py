"""Tests for the scenario catalogue and its diagnostics."""

import numpy as np
import pytest

from duesenberry.equilibrium import build_market
from duesenberry.scenarios import (
    ScenarioSpec,
    build_scenario,
    desk_flow_model,
    desk_spec,
    labor_value_check,
    smooth_market_diagnostic,
)
from duesenberry.utils.errors import ScenarioError


class TestLaborValue:
    """H·L − ∫H·Q is constant along every path."""

    def test_decaying_share(self, example51_market):
        report = labor_value_check(example51_market)
        assert report.passed
        assert report.reference_error is not None
        assert report.tolerance == example51_market.dt

    def test_decaying_value(self, example53_market):
        report = labor_value_check(example53_market)
        assert report.passed
        assert example53_market.scenario == "example53"

    def test_rentier_has_no_labor(self, rentier_market):
        report = labor_value_check(rentier_market)
        assert report.passed
        assert report.reference_error is None

    def test_price_is_below_rentier_price(self, example51_market):
        """Labor income lowers the stock price below η/H."""
        valid = example51_market.valid
        rentier_price = example51_market.eta / example51_market.state_price
        assert np.all(example51_market.price[valid] < rentier_price[valid])


class TestLaborFlowEndowment:
    """Floor and endowment-share form of the decaying value field."""

    def test_valid_flow(self, desk_ensemble):
        spec = desk_spec("example53", floor_share=0.2, flow_share=0.25, flow_growth=0.0)
        market = build_market(build_scenario(spec), desk_ensemble)
        assert labor_value_check(market).passed
        assert float(market.references["u_recovery_error"]) < 1e-8

    def test_rising_value_is_rejected(self, desk_ensemble):
        """A floor above the endowment share makes χ increase."""
        spec = desk_spec("example53", floor_share=0.3, flow_share=0.1, flow_growth=0.0)
        with pytest.raises(ScenarioError, match="increases"):
            build_market(build_scenario(spec), desk_ensemble)


class TestBuilders:
    """Scenario validation at build time."""

    def test_negative_share(self):
        with pytest.raises(ScenarioError):
            build_scenario(desk_spec("example51", initial_share=-0.1))

    def test_shares_exhaust_income(self):
        with pytest.raises(ScenarioError):
            build_scenario(desk_spec("example51", initial_share=1.5))

    def test_share_length(self):
        with pytest.raises(ScenarioError):
            build_scenario(desk_spec("example51", initial_share=[0.1, 0.2]))

    def test_example53_budget(self):
        with pytest.raises(ScenarioError):
            build_scenario(desk_spec("example53", initial_share=1.2))

    @pytest.mark.parametrize("table", [
        None,
        ((0.0, -1.0, 1.0), (0.1, 0.2, 0.3)),
        ((0.0, 1.0), (0.1, 1.0)),
        ((0.0,), (0.1,)),
    ])
    def test_bad_table(self, table):
        with pytest.raises(ScenarioError):
            build_scenario(desk_spec("tabulated", table=table))

    def test_unknown_kind(self):
        spec = desk_spec("rentier")
        bogus = ScenarioSpec(kind="lottery", model=spec.model, measure=spec.measure,
                             income=spec.income, y=spec.y)
        with pytest.raises(ScenarioError, match="unknown scenario kind"):
            build_scenario(bogus)

    def test_rentier_inputs(self):
        inputs = build_scenario(desk_spec("rentier"))
        assert inputs.endowment.kind == "rentier"
        assert inputs.budget_gap <= 1e-12


class TestDeskModel:
    """Default desk flow."""

    def test_invalid_parameters(self):
        with pytest.raises(ScenarioError):
            desk_flow_model(gamma_range=(0.08, 0.01))
        with pytest.raises(ScenarioError):
            desk_flow_model(volatility=(0.0, 0.2))

    def test_impatience_between_bounds(self, desk_model):
        x = np.linspace(-5.0, 5.0, 101)[:, None]
        gamma = desk_model.impatience(x)
        assert np.all((gamma > 0.01) & (gamma < 0.08))
        assert np.all(np.diff(gamma) > 0)
        assert np.all(desk_model.impatience_gradient(x) > 0)


class TestSmoothMarket:
    """Search for a smooth-market configuration."""

    def test_one_dimensional_types_are_infeasible(self, example51_market):
        report = smooth_market_diagnostic(example51_market, candidate=([1.0, 0.0], [0.0, 1.0]))
        assert not report.feasible
        assert report.candidate_feasible is False
        assert np.isfinite(report.min_theta_norm)
        assert set(report.summary()) >= {"feasible", "separation", "u", "v"}

    def test_needs_two_noises(self, rentier_market):
        with pytest.raises(ScenarioError):
            smooth_market_diagnostic(rentier_market)

    def test_needs_gradients(self, desk_ensemble):
        spec = desk_spec("rentier", income_gradient=None)
        market = build_market(build_scenario(spec), desk_ensemble, estimate=False)
        with pytest.raises(ScenarioError):
            smooth_market_diagnostic(market)
