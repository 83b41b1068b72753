"""Tests for the statistical oracle."""

import numpy as np
import pytest

from duesenberry.utils.errors import OracleError
from duesenberry.validation_oracle import (
    band_test,
    brute_force_aggregate,
    convergence_order,
    kahan_sum,
    martingale_test,
    regress_increments,
)


class TestMartingaleTest:
    """Cross-path mean of increments against zero."""

    def test_centred_noise_passes(self):
        rng = np.random.default_rng(0)
        report = martingale_test(rng.standard_normal((2000, 50)))
        assert report.passed
        assert report.summary()["steps"] == 50

    def test_drift_fails(self):
        rng = np.random.default_rng(0)
        report = martingale_test(rng.standard_normal((2000, 50)) + 0.5)
        assert not report.passed
        assert report.pass_fraction == 0.0

    def test_masked_paths_are_dropped(self):
        """Invalid paths never enter the statistic."""
        values = np.zeros((150, 4))
        values[:10] = 1e6
        valid = np.ones(150, dtype=bool)
        valid[:10] = False
        report = martingale_test(values, valid=valid)
        assert report.passed
        assert np.all(report.statistic == 0.0)

    def test_needs_enough_paths(self):
        with pytest.raises(OracleError):
            martingale_test(np.zeros((99, 5)))

    def test_needs_matrix(self):
        with pytest.raises(OracleError):
            martingale_test(np.zeros((200, 5, 2)))


class TestBandTest:
    """Per-step band with a floor."""

    def test_floor_widens_band(self):
        statistic = np.full(10, 0.01)
        se = np.zeros(10)
        assert not band_test(statistic, se, "tight").passed
        assert band_test(statistic, se, "floored", floor=0.02).passed

    def test_target(self):
        report = band_test(np.array([1.0, 2.0]), np.array([0.1, 0.1]), "t",
                           target=np.array([1.05, 2.0]))
        assert report.passed

    def test_vector_components_must_all_pass(self):
        statistic = np.array([[0.0, 1.0]] * 4)
        report = band_test(statistic, np.full((4, 2), 0.1), "vector")
        assert report.pass_fraction == 0.0


class TestRegression:
    """Per-step least squares on [1, ΔW]."""

    def test_exact_linear_response(self):
        """A noiseless linear response is recovered exactly."""
        rng = np.random.default_rng(3)
        dw = rng.standard_normal((300, 6, 2)) * 0.1
        response = 0.3 + 2.0 * dw[..., 0] - dw[..., 1]
        fit = regress_increments(response, dw)
        np.testing.assert_allclose(fit.intercept, 0.3, atol=1e-12)
        np.testing.assert_allclose(fit.slopes, np.tile([2.0, -1.0], (6, 1)), atol=1e-11)
        assert np.all(fit.slopes_se < 1e-10)
        assert fit.paths_used == 300

    def test_shape_mismatch(self):
        with pytest.raises(OracleError):
            regress_increments(np.zeros((200, 5)), np.zeros((200, 4, 1)))

    def test_needs_enough_paths(self):
        with pytest.raises(OracleError):
            regress_increments(np.zeros((50, 5)), np.zeros((50, 5, 1)))


class TestConvergenceOrder:
    """Log-log slope of errors against mesh."""

    def test_first_order(self):
        fit = convergence_order([(h, 3.0 * h) for h in (0.1, 0.05, 0.025)])
        assert fit.slope == pytest.approx(1.0)
        assert fit.meshes == (0.025, 0.05, 0.1)

    def test_second_order(self):
        fit = convergence_order([(h, h ** 2) for h in (0.2, 0.1, 0.05, 0.025)])
        assert fit.slope == pytest.approx(2.0)

    def test_too_few_meshes(self):
        with pytest.raises(OracleError):
            convergence_order([(0.1, 0.1), (0.05, 0.05)])

    def test_non_positive_error(self):
        with pytest.raises(OracleError):
            convergence_order([(0.1, 0.1), (0.05, 0.0), (0.025, 0.01)])


class TestCompensatedSums:
    """Brute-force aggregation helpers."""

    def test_kahan_recovers_cancelled_term(self):
        assert kahan_sum([1e16, 1.0, -1e16]) == 1.0

    def test_brute_force_aggregate(self):
        total = brute_force_aggregate([0, 1], [0.5, 0.5], [2.0, 4.0], [0.0, np.log(2.0)])
        assert total == pytest.approx(0.5 * 2.0 + 0.5 * 2.0 * 4.0)

    def test_length_mismatch(self):
        with pytest.raises(OracleError, match="length mismatch"):
            brute_force_aggregate([0, 1], [1.0], [1.0, 1.0], [0.0, 0.0])
