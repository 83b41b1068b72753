"""Tests for type flow simulation, cocycles and the Feller test."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from duesenberry.flow_engine import (
    FellerVerdict,
    FlowModel,
    TimeGrid,
    coarsen_increments,
    feller_for_model,
    feller_nonexplosion_1d,
    left_point_integral,
    path_increments,
    restart_flow,
    simulate_flow,
    simulate_from_increments,
    verify_cocycles,
)
from duesenberry.utils.errors import ModelError, SimulationError


def brownian(domain=None) -> FlowModel:
    kwargs = {} if domain is None else {"domain": domain}
    return FlowModel(
        dimension=1,
        noise_dimension=1,
        drift=lambda x: np.zeros(x.shape),
        diffusion=lambda x: np.ones(x.shape + (1,)),
        impatience=lambda x: np.full(x.shape[:-1], 0.02),
        impatience_bounds=(0.02, 0.02),
        **kwargs,
    )


class TestTimeGrid:
    """Uniform grids, restarts and coarsening."""

    def test_times_cover_interval(self):
        """Grid runs from t0 to the horizon in equal steps."""
        grid = TimeGrid(1.0, 3.0, 8)
        assert grid.dt == pytest.approx(0.25)
        assert grid.times[0] == 1.0
        assert grid.times[-1] == pytest.approx(3.0)
        assert grid.elapsed[0] == 0.0

    def test_tail_keeps_spacing(self):
        """A restarted grid keeps Δt bit for bit."""
        grid = TimeGrid(0.0, 1.0, 30)
        tail = grid.tail(10)
        assert tail.dt == grid.dt
        assert tail.steps == 20
        assert tail.t0 == grid.times[10]

    def test_invalid_grids(self):
        """Empty or reversed grids are rejected."""
        with pytest.raises(SimulationError):
            TimeGrid(0.0, 1.0, 0)
        with pytest.raises(SimulationError):
            TimeGrid(1.0, 1.0, 10)
        with pytest.raises(SimulationError):
            TimeGrid(0.0, 1.0, 10).coarsen(3)
        with pytest.raises(SimulationError):
            TimeGrid(0.0, 1.0, 10).tail(10)


class TestFlowModel:
    """Declared coefficient bounds."""

    def test_bad_bounds(self):
        """Impatience must be bounded away from zero."""
        with pytest.raises(ModelError):
            dataclasses.replace(brownian(), impatience_bounds=(0.0, 0.1))
        with pytest.raises(ModelError):
            dataclasses.replace(brownian(), growth_bounds=(0.1, -0.1))

    def test_check_bounds_detects_escape(self, desk_model):
        """A sampled γ outside the declared range raises."""
        narrow = dataclasses.replace(desk_model, impatience_bounds=(0.01, 0.02))
        with pytest.raises(ModelError):
            narrow.check_bounds(np.array([[0.0], [3.0]]))
        desk_model.check_bounds(np.array([[0.0], [3.0]]))


class TestSimulation:
    """Common-noise Euler–Maruyama simulation."""

    def test_same_seed_same_paths(self, desk_model):
        """A seed fixes every number."""
        grid = TimeGrid(0.0, 1.0, 10)
        a = simulate_flow(desk_model, grid, [[0.0], [1.0]], 50, seed=3)
        b = simulate_flow(desk_model, grid, [[0.0], [1.0]], 50, seed=3)
        assert np.array_equal(a.states, b.states)
        c = simulate_flow(desk_model, grid, [[0.0], [1.0]], 50, seed=4)
        assert not np.array_equal(a.states, c.states)

    def test_thread_count_does_not_change_results(self, desk_model):
        """Chunked threads reproduce the single-threaded ensemble."""
        grid = TimeGrid(0.0, 1.0, 10)
        single = simulate_flow(desk_model, grid, [[0.0], [0.5]], 600, seed=9, threads=1)
        pooled = simulate_flow(desk_model, grid, [[0.0], [0.5]], 600, seed=9, threads=4)
        assert np.array_equal(single.states, pooled.states)

    def test_path_streams_do_not_depend_on_path_count(self):
        """Path p draws from its own spawned generator."""
        few = path_increments(21, 5, 12, 2, 0.1)
        many = path_increments(21, 40, 12, 2, 0.1)
        assert np.array_equal(few, many[:5])

    def test_zero_noise_ou_is_euler_recursion(self):
        """Without noise the flow is x₀(1 − θΔt)^j."""
        model = FlowModel.ornstein_uhlenbeck(mean_reversion=0.5, volatility=0.0)
        grid = TimeGrid(0.0, 1.0, 10)
        ensemble = simulate_flow(model, grid, [[2.0]], 3, seed=0)
        expected = 2.0 * (1.0 - 0.5 * grid.dt) ** np.arange(11)
        np.testing.assert_allclose(ensemble.states[:, 0, :, 0], np.tile(expected, (3, 1)),
                                   rtol=1e-14)

    def test_all_types_share_the_noise(self, desk_ensemble):
        """Every type on a path sees the same increments."""
        assert desk_ensemble.increments.shape == (200, 40, 2)
        assert desk_ensemble.states.shape == (200, 5, 41, 1)
        assert desk_ensemble.flagged_fraction == 0.0

    def test_growth_weights(self):
        """log Λ is the trapezoid integral of h."""
        model = FlowModel.ornstein_uhlenbeck(volatility=0.2, growth_rate=0.03)
        ensemble = simulate_flow(model, TimeGrid(0.0, 2.0, 20), [[0.0]], 5, seed=1)
        np.testing.assert_allclose(ensemble.weights[:, 0, -1], np.exp(0.06), rtol=1e-12)

    def test_exploding_paths_are_frozen_and_flagged(self):
        """Paths that leave the domain stop and carry a flag."""
        model = brownian(domain=lambda x: x[..., 0] < 1.0)
        ensemble = simulate_flow(model, TimeGrid(0.0, 1.0, 100), [[0.0]], 400, seed=2)
        assert 0.0 < ensemble.flagged_fraction < 0.5
        frozen = ensemble.states[ensemble.flagged, 0, -1, 0]
        assert np.all(frozen < 1.0)

    def test_mostly_exploding_scenario_is_rejected(self):
        """More than half the paths flagged aborts the run."""
        model = brownian(domain=lambda x: x[..., 0] < 0.05)
        with pytest.raises(SimulationError, match="ill-posed"):
            simulate_flow(model, TimeGrid(0.0, 1.0, 100), [[0.0]], 200, seed=2)

    def test_initial_points_must_lie_in_domain(self):
        """Starting outside the domain is an error."""
        model = brownian(domain=lambda x: x[..., 0] < 1.0)
        with pytest.raises(SimulationError):
            simulate_flow(model, TimeGrid(0.0, 1.0, 10), [[2.0]], 10, seed=0)

    def test_increment_shape_checked(self, desk_model):
        """Increments must match the grid and the noise dimension."""
        grid = TimeGrid(0.0, 1.0, 10)
        with pytest.raises(SimulationError):
            simulate_from_increments(desk_model, grid, [[0.0]], np.zeros((4, 9, 2)))
        with pytest.raises(SimulationError):
            simulate_from_increments(desk_model, grid, [[0.0]], np.zeros((4, 10, 1)))

    def test_coarsened_increments_sum(self):
        """Coarse increments are sums of fine ones."""
        fine = path_increments(0, 3, 8, 1, 0.125)
        coarse = coarsen_increments(fine, 4)
        np.testing.assert_allclose(coarse[:, 0], fine[:, :4].sum(axis=1))


class TestCocycles:
    """Restarting the flow from t_s composes with the head of the path."""

    def test_restart_reproduces_flow_bitwise(self, desk_ensemble):
        """φ_{s,t}∘φ_{0,s} equals φ_{0,t} exactly."""
        report = verify_cocycles(desk_ensemble, 17)
        assert report.flow_bitwise
        assert report.passed

    def test_weight_cocycle_with_state_dependent_growth(self, desk_model):
        """Λ_{0,t} = Λ_{0,s}·Λ_{s,t}(φ_{0,s}) for a type-dependent h."""
        model = dataclasses.replace(desk_model, growth=lambda x: 0.02 * np.tanh(x[..., 0]),
                                    growth_bounds=(-0.02, 0.02))
        ensemble = simulate_flow(model, TimeGrid(0.0, 1.0, 25), [[-0.5], [0.5]], 40, seed=8)
        report = verify_cocycles(ensemble, 11)
        assert report.weight_max_rel_diff <= 1e-12
        assert report.summary()["passed"]

    def test_restart_resets_weights(self, desk_ensemble):
        """The restarted ensemble starts with unit weights at the transported points."""
        restarted = restart_flow(desk_ensemble, 5)
        assert np.all(restarted.log_weights[:, :, 0] == 0.0)
        assert np.array_equal(restarted.initial_states, desk_ensemble.states[:, :, 5])


class TestLeftPointIntegral:
    """Non-anticipating cumulative integral."""

    def test_constant_rate(self):
        values = np.full((2, 11), 0.3)
        out = left_point_integral(values, 0.1)
        np.testing.assert_allclose(out[0], 0.03 * np.arange(11), atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(2, 30),
                  elements=st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)),
           st.floats(1e-3, 1.0))
    def test_only_past_values_enter(self, values, dt):
        """The value at step j+1 uses values up to step j."""
        out = left_point_integral(values, dt)
        assert out[0] == 0.0
        np.testing.assert_allclose(np.diff(out), values[:-1] * dt, atol=1e-9)
        changed = values.copy()
        changed[-1] += 1.0
        assert np.array_equal(left_point_integral(changed, dt), out)


class TestFeller:
    """One-dimensional non-explosion test."""

    def test_ou_is_non_explosive(self):
        """Mean reversion makes K diverge in both directions."""
        model = FlowModel.ornstein_uhlenbeck(mean_reversion=1.0, volatility=0.3)
        assert feller_for_model(model).verdict == FellerVerdict.NON_EXPLOSIVE

    def test_brownian_motion_is_non_explosive(self):
        """K(x) = x² grows without bound."""
        report = feller_nonexplosion_1d(lambda z: np.zeros_like(z), lambda z: np.ones_like(z))
        assert report.verdict == FellerVerdict.NON_EXPLOSIVE
        assert report.divergent_up and report.divergent_down

    def test_cubic_drift_is_inconclusive(self):
        """Superlinear outward drift keeps K bounded."""
        report = feller_nonexplosion_1d(lambda z: z ** 3, lambda z: np.ones_like(z))
        assert report.verdict == FellerVerdict.INCONCLUSIVE

    def test_probe_range_must_straddle_origin(self):
        with pytest.raises(ModelError):
            feller_nonexplosion_1d(lambda z: -z, lambda z: np.ones_like(z), (1.0, 5.0))

    def test_needs_scalar_flow(self, desk_model):
        """The desk flow has two noise dimensions."""
        with pytest.raises(ModelError):
            feller_for_model(desk_model)
