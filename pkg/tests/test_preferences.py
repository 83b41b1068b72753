"""Tests for consistent isoelastic preference structures."""

import math

import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from duesenberry.flow_engine import TimeGrid
from duesenberry.policy import perturbed_utility_comparison
from duesenberry.preferences import (
    IsoelasticPreference,
    check_duality,
    chi,
    chi_closed_form,
    consumption_fraction,
    inverse_marginal_1,
    inverse_marginal_2,
    marginal_1,
    time_consistency_residual,
    u1,
    u2,
)
from duesenberry.utils.errors import PreferenceError


@pytest.fixture
def pref() -> IsoelasticPreference:
    return IsoelasticPreference(scale=1.0, alpha=0.5, beta=0.05)


class TestIsoelasticPreference:
    """Parameter validation and derived constants."""

    @pytest.mark.parametrize("params", [
        {"alpha": 0.0, "beta": 0.05},
        {"alpha": 1.0, "beta": 0.05},
        {"alpha": 0.5, "beta": 1.0},
        {"alpha": 0.5, "beta": -0.1},
        {"alpha": 0.5, "beta": 0.05, "scale": 0.0},
        {"alpha": 0.5, "beta": 0.05, "colour": "blue"},
    ])
    def test_invalid_parameters(self, params):
        with pytest.raises(ValidationError):
            IsoelasticPreference(**params)

    def test_effective_impatience(self, pref):
        """γ = β/(1−α) and the optimal consumption fraction equals it."""
        assert pref.gamma == pytest.approx(0.1)
        assert consumption_fraction(pref) == pref.gamma

    def test_consistent_terminal_scale(self, pref):
        """d = c((1−α)/β)^{1−α}."""
        assert pref.terminal_scale == pytest.approx(math.sqrt(10.0))

    def test_zero_beta_has_no_consistent_structure(self):
        single = IsoelasticPreference(alpha=0.5, beta=0.0)
        with pytest.raises(PreferenceError):
            _ = single.gamma
        with pytest.raises(PreferenceError):
            _ = single.terminal_scale

    def test_perturbed_scales_terminal_utility(self, pref):
        bumped = pref.perturbed(1.1)
        assert bumped.terminal_scale == pytest.approx(1.1 * pref.terminal_scale)
        assert bumped.alpha == pref.alpha


class TestUtilities:
    """Utilities, marginals and their inverses."""

    def test_utility_values(self, pref):
        assert u1(pref, 0.0, 4.0) == pytest.approx(2.0)
        assert marginal_1(pref, 0.0, 4.0) == pytest.approx(0.25)

    def test_terminal_utility_uses_terminal_scale(self, pref):
        ratio = u2(pref, 1.0, 9.0) / u1(pref, 1.0, 9.0)
        assert ratio == pytest.approx(pref.terminal_scale / pref.scale)

    def test_non_positive_argument(self, pref):
        with pytest.raises(PreferenceError):
            u1(pref, 0.0, 0.0)
        with pytest.raises(PreferenceError):
            inverse_marginal_1(pref, 0.0, -1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.05, 0.95), st.floats(0.01, 0.5), st.floats(0.0, 20.0),
           st.floats(1e-2, 1e2))
    def test_inverse_marginal(self, alpha, beta, t, y):
        """𝓘₁(t, ∂U₁(t, y)) = y."""
        pref = IsoelasticPreference(alpha=alpha, beta=beta)
        z = marginal_1(pref, t, y)
        assert inverse_marginal_1(pref, t, z) == pytest.approx(y, rel=1e-9)


class TestConsistency:
    """Horizon-free 𝒳 and the consistency identity."""

    @pytest.mark.parametrize("horizon", [5.0, 20.0, 60.0])
    def test_chi_does_not_depend_on_horizon(self, pref, horizon):
        assert chi(pref, 1.0, horizon, 0.7) == pytest.approx(
            chi_closed_form(pref, 1.0, 0.7), rel=1e-9)

    def test_chi_needs_ordered_times(self, pref):
        with pytest.raises(PreferenceError):
            chi(pref, 3.0, 2.0, 1.0)

    def test_consistent_structure(self, pref):
        residual = time_consistency_residual(pref, 2.0, 12.0, 0.5)
        assert residual / inverse_marginal_2(pref, 2.0, 0.5) < 1e-9

    def test_perturbed_structure_is_inconsistent(self, pref):
        bumped = pref.perturbed(1.1)
        residual = time_consistency_residual(bumped, 2.0, 12.0, 0.5)
        assert residual / inverse_marginal_2(bumped, 2.0, 0.5) > 1e-3

    def test_times_must_be_ordered(self, pref):
        with pytest.raises(PreferenceError):
            time_consistency_residual(pref, 5.0, 1.0, 1.0)


class TestDuality:
    """Convex conjugate at the inverse marginal."""

    @pytest.mark.parametrize("t,z", [(0.0, 1.0), (3.0, 0.2), (10.0, 5.0)])
    def test_supremum_at_inverse_marginal(self, pref, t, z):
        optimum = inverse_marginal_1(pref, t, z)
        level = optimum * z * (1.0 / pref.alpha - 1.0)
        assert check_duality(pref, t, z) / level < 1e-8

    def test_terminal_duality(self, pref):
        optimum = inverse_marginal_2(pref, 2.0, 0.3)
        level = optimum * 0.3 * (1.0 / pref.alpha - 1.0)
        assert check_duality(pref, 2.0, 0.3, terminal=True) / level < 1e-8

    def test_rejects_non_positive_level(self, pref):
        with pytest.raises(PreferenceError):
            check_duality(pref, 0.0, 0.0)


class TestPerturbedUtility:
    """Consuming γ of net wealth beats scaled fractions."""

    def test_optimum_at_unit_factor(self, pref):
        values = perturbed_utility_comparison(pref, TimeGrid(0.0, 10.0, 2000), 5.0)
        assert set(values) == {0.9, 1.0, 1.1}
        assert values[1.0] > values[0.9]
        assert values[1.0] > values[1.1]
