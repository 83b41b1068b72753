"""Tests for rolling and limit consumption-investment policies."""

import numpy as np
import pytest

from duesenberry.flow_engine import TimeGrid, simulate_flow
from duesenberry.policy import (
    Partition,
    aggregate_policy,
    deflated_wealth_increments,
    limit_policy,
    optimal_policy_fixed_gamma,
    rolling_gap_study,
    rolling_policy,
)
from duesenberry.scenarios import desk_population
from duesenberry.utils.errors import PolicyError
from duesenberry.validation_oracle import convergence_order


Y = np.array([40.0, 45.0, 50.0, 55.0, 60.0])


@pytest.fixture(scope="module")
def flat_kernel(desk_ensemble):
    return np.ones((desk_ensemble.paths, desk_ensemble.grid.steps + 1))


class TestPartition:
    """Grid-index partitions of the horizon."""

    def test_uniform(self):
        grid = TimeGrid(0.0, 2.0, 40)
        assert Partition.uniform(grid, 0.5).indices == (0, 10, 20, 30, 40)

    def test_single_and_full(self):
        grid = TimeGrid(0.0, 1.0, 4)
        assert Partition.single(grid).indices == (0, 4)
        assert Partition.full(grid).indices == (0, 1, 2, 3, 4)

    @pytest.mark.parametrize("indices", [(1, 4), (0,), (0, 3, 3, 4), (0, 5, 2)])
    def test_invalid(self, indices):
        with pytest.raises(PolicyError):
            Partition(indices)

    def test_incompatible_mesh(self):
        with pytest.raises(PolicyError):
            Partition.uniform(TimeGrid(0.0, 1.0, 10), 0.15)
        with pytest.raises(PolicyError):
            Partition.uniform(TimeGrid(0.0, 1.0, 10), 0.3)


class TestRollingPolicy:
    """Short-horizon scheme and its limit."""

    def test_single_partition_is_fixed_gamma(self, desk_ensemble, flat_kernel):
        """One interval freezes γ at the initial type for the whole horizon."""
        rolled = rolling_policy(desk_ensemble, Partition.single(desk_ensemble.grid),
                                flat_kernel, 1.0, Y)
        fixed = optimal_policy_fixed_gamma(desk_ensemble, flat_kernel, 1.0, Y)
        assert np.array_equal(rolled.net_wealth, fixed.net_wealth)
        assert np.array_equal(rolled.consumption, fixed.consumption)

    def test_full_partition_differs_by_quadrature(self, desk_ensemble, flat_kernel):
        """Left endpoints against the trapezoid: the ratio is e^{−(Δt/2)(γ_t − γ_0)}."""
        rolled = rolling_policy(desk_ensemble, Partition.full(desk_ensemble.grid),
                                flat_kernel, 1.0, Y)
        limit = limit_policy(desk_ensemble, flat_kernel, 1.0, Y)
        valid = desk_ensemble.valid
        gamma = desk_ensemble.model.impatience(desk_ensemble.states)
        expected = np.exp(-0.5 * desk_ensemble.grid.dt * (gamma - gamma[:, :, :1]))
        np.testing.assert_allclose((limit.net_wealth / rolled.net_wealth)[valid],
                                   expected[valid], rtol=1e-10)
        assert np.max(np.abs(limit.net_wealth - rolled.net_wealth)[valid]) > 0.0

    def test_full_partition_gap_is_first_order(self, desk_model):
        """Halving Δt halves the full-grid gap to the limit policy."""
        points = desk_population().points
        pairs = []
        for steps in (20, 40, 80):
            ensemble = simulate_flow(desk_model, TimeGrid(0.0, 2.0, steps), points, 200, seed=11)
            kernel = np.ones((ensemble.paths, steps + 1))
            rolled = rolling_policy(ensemble, Partition.full(ensemble.grid), kernel, 1.0, Y)
            limit = limit_policy(ensemble, kernel, 1.0, Y)
            gap = np.max(np.abs(rolled.net_wealth - limit.net_wealth), axis=(1, 2))
            pairs.append((ensemble.grid.dt, float(np.mean(gap[ensemble.valid]))))
        assert 0.8 <= convergence_order(pairs).slope <= 1.2

    def test_market_integral_is_reused(self, desk_ensemble, flat_kernel):
        rolled = rolling_policy(desk_ensemble, Partition.full(desk_ensemble.grid),
                                flat_kernel, 1.0, Y)
        limit = limit_policy(desk_ensemble, flat_kernel, 1.0, Y,
                             impatience_integral=rolled.impatience_integral)
        np.testing.assert_allclose(limit.net_wealth, rolled.net_wealth, rtol=1e-12)
        with pytest.raises(PolicyError):
            limit_policy(desk_ensemble, flat_kernel, 1.0, Y,
                         impatience_integral=rolled.impatience_integral[:, :, :-1])

    def test_consumption_is_rate_times_net_wealth(self, desk_ensemble, flat_kernel):
        limit = limit_policy(desk_ensemble, flat_kernel, 1.0, Y)
        np.testing.assert_array_equal(limit.consumption, limit.rate * limit.net_wealth)
        np.testing.assert_allclose(limit.net_wealth[:, :, 0], np.tile(Y, (desk_ensemble.paths, 1)))

    def test_partition_must_reach_grid_end(self, desk_ensemble, flat_kernel):
        with pytest.raises(PolicyError):
            rolling_policy(desk_ensemble, Partition((0, 10)), flat_kernel, 1.0, Y)

    def test_kernel_errors(self, desk_ensemble, flat_kernel):
        with pytest.raises(PolicyError):
            limit_policy(desk_ensemble, flat_kernel[:, :-1], 1.0, Y)
        with pytest.raises(PolicyError):
            limit_policy(desk_ensemble, -flat_kernel, 1.0, Y)
        with pytest.raises(PolicyError):
            limit_policy(desk_ensemble, flat_kernel, 1.0, Y[:3])
        with pytest.raises(PolicyError):
            limit_policy(desk_ensemble, flat_kernel, 1.0, -Y)

    def test_gap_shrinks_with_mesh(self, desk_ensemble, flat_kernel):
        """sup |ξ^Γ − ξ^lim| falls as the rolling mesh shrinks."""
        pairs = rolling_gap_study(desk_ensemble, (1.0, 0.5, 0.25, 0.1), flat_kernel, 1.0, Y)
        gaps = [gap for _, gap in pairs]
        assert gaps == sorted(gaps, reverse=True)
        assert convergence_order(pairs).slope > 0.5


class TestAggregates:
    """Population sums of policy fields."""

    def test_aggregate_sums(self, desk_ensemble, flat_kernel):
        measure = desk_population()
        policy = limit_policy(desk_ensemble, flat_kernel, 1.0, Y)
        totals = aggregate_policy(policy, measure)
        np.testing.assert_allclose(totals.consumption,
                                   np.einsum("k,mkj->mj", measure.weights, policy.consumption))
        np.testing.assert_allclose(totals.net_wealth[:, 0], np.mean(Y))

    def test_measure_mismatch(self, desk_ensemble, flat_kernel):
        policy = limit_policy(desk_ensemble, flat_kernel, 1.0, Y)
        with pytest.raises(PolicyError):
            aggregate_policy(policy, desk_population(3))

    def test_deflated_wealth_balances_consumption(self, desk_ensemble, flat_kernel):
        """Under H ≡ 1 net wealth falls by what is consumed, up to the trapezoid error."""
        measure = desk_population()
        policy = limit_policy(desk_ensemble, flat_kernel, 1.0, Y)
        increments = deflated_wealth_increments(policy, measure, desk_ensemble.grid.dt)
        assert increments.shape == (desk_ensemble.paths, desk_ensemble.grid.steps)
        scale = float(np.mean(Y))
        assert np.max(np.abs(increments)) / scale < desk_ensemble.grid.dt
