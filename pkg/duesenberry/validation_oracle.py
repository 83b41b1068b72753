"""
Statistical machinery shared by every verification suite.

This module provides:
- Cross-path martingale tests with 3-sigma bands and a pass-fraction verdict
- Per-step cross-path least squares of increments on Brownian increments
- Convergence-order fits across nested meshes
- A compensated-summation aggregation oracle independent of population.aggregate

Example usage:
    from duesenberry.validation_oracle import martingale_test

    report = martingale_test(increments, name="deflated gains")
    assert report.passed
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from duesenberry.utils.errors import OracleError


# Configure logging
logger = logging.getLogger(__name__)


MIN_PATHS = 100
DEFAULT_SIGMAS = 3.0
DEFAULT_PASS_FRACTION = 0.95


@dataclass
class StatTestReport:
    """Per-step statistic with band, pass flags and overall verdict."""
    name: str
    statistic: np.ndarray
    standard_error: np.ndarray
    step_passed: np.ndarray
    confidence_sigmas: float = DEFAULT_SIGMAS
    required_fraction: float = DEFAULT_PASS_FRACTION
    floor: float = 0.0
    target: Optional[np.ndarray] = None

    @property
    def pass_fraction(self) -> float:
        if self.step_passed.size == 0:
            return 1.0
        return float(np.mean(self.step_passed))

    @property
    def passed(self) -> bool:
        return self.pass_fraction >= self.required_fraction

    def summary(self) -> Dict[str, Any]:
        return {
            "test": self.name,
            "pass_fraction": self.pass_fraction,
            "passed": self.passed,
            "confidence_sigmas": self.confidence_sigmas,
            "required_fraction": self.required_fraction,
            "floor": self.floor,
            "max_abs_statistic": float(np.max(np.abs(self.statistic), initial=0.0)),
            "steps": int(self.statistic.shape[0]),
        }


@dataclass
class RegressionResult:
    """Per-step OLS of y on [1, ΔW]: intercept and slopes with standard errors."""
    intercept: np.ndarray
    intercept_se: np.ndarray
    slopes: np.ndarray
    slopes_se: np.ndarray
    paths_used: int


@dataclass
class ConvergenceFit:
    slope: float
    stderr: float
    intercept: float
    meshes: Tuple[float, ...] = field(default_factory=tuple)
    errors: Tuple[float, ...] = field(default_factory=tuple)


def _select_paths(values: np.ndarray, valid: Optional[np.ndarray]) -> np.ndarray:
    if valid is None:
        return values
    valid = np.asarray(valid, dtype=bool)
    if valid.shape[0] != values.shape[0]:
        raise OracleError(f"valid mask has {valid.shape[0]} entries for {values.shape[0]} paths")
    return values[valid]


def band_test(
    statistic: np.ndarray,
    standard_error: np.ndarray,
    name: str,
    confidence_sigmas: float = DEFAULT_SIGMAS,
    required_fraction: float = DEFAULT_PASS_FRACTION,
    floor: float = 0.0,
    target: Optional[np.ndarray] = None,
) -> StatTestReport:
    """
    Pass a step when |statistic - target| lies inside max(k·se, floor).

    Args:
        statistic: Per-step estimates, shape (N,) or (N, n) (all components must pass)
        standard_error: Matching standard errors
        name: Test name for reports
        confidence_sigmas: Band half-width in standard errors
        required_fraction: Fraction of passing steps for a pass verdict
        floor: Absolute lower bound on the band half-width
        target: Value expected under the null (zero if omitted)
    """
    statistic = np.asarray(statistic, dtype=float)
    standard_error = np.asarray(standard_error, dtype=float)
    centre = statistic if target is None else statistic - np.asarray(target, dtype=float)
    half_width = np.maximum(confidence_sigmas * standard_error, floor)
    inside = np.abs(centre) <= half_width
    if inside.ndim > 1:
        inside = np.all(inside, axis=tuple(range(1, inside.ndim)))
    report = StatTestReport(
        name=name,
        statistic=statistic,
        standard_error=standard_error,
        step_passed=inside,
        confidence_sigmas=confidence_sigmas,
        required_fraction=required_fraction,
        floor=floor,
        target=None if target is None else np.asarray(target, dtype=float),
    )
    logger.debug(f"{name}: {report.pass_fraction:.3f} of steps inside band")
    return report


def martingale_test(
    increments: np.ndarray,
    name: str = "martingale",
    confidence_sigmas: float = DEFAULT_SIGMAS,
    required_fraction: float = DEFAULT_PASS_FRACTION,
    floor: float = 0.0,
    valid: Optional[np.ndarray] = None,
) -> StatTestReport:
    """
    Test that per-step increments have zero cross-path mean.

    Args:
        increments: Array (M, N) of per-path per-step increments
        name: Test name for reports
        confidence_sigmas: Band half-width in standard errors
        required_fraction: Fraction of steps that must pass
        floor: Absolute band floor (discretization tolerance)
        valid: Optional path mask; masked paths are dropped

    Returns:
        StatTestReport with the per-step mean as statistic

    Raises:
        OracleError: fewer than 100 usable paths
    """
    values = _select_paths(np.asarray(increments, dtype=float), valid)
    if values.ndim != 2:
        raise OracleError(f"increments must be (paths, steps), got shape {values.shape}")
    paths = values.shape[0]
    if paths < MIN_PATHS:
        raise OracleError(f"martingale test needs at least {MIN_PATHS} paths, got {paths}")
    mean = values.mean(axis=0)
    standard_error = values.std(axis=0, ddof=1) / math.sqrt(paths)
    return band_test(mean, standard_error, name, confidence_sigmas, required_fraction, floor)


def regress_increments(
    response: np.ndarray,
    increments: np.ndarray,
    valid: Optional[np.ndarray] = None,
) -> RegressionResult:
    """
    Cross-path least squares per step: response ≈ a + bᵀΔW.

    Args:
        response: Array (M, N) of per-step responses
        increments: Array (M, N, n) of Brownian increments
        valid: Optional path mask

    Returns:
        RegressionResult with (N,) intercepts and (N, n) slopes, plus standard errors

    Raises:
        OracleError: fewer than 100 usable paths or shape mismatch
    """
    y = _select_paths(np.asarray(response, dtype=float), valid)
    dw = _select_paths(np.asarray(increments, dtype=float), valid)
    if y.shape != dw.shape[:2]:
        raise OracleError(f"response shape {y.shape} does not match increments {dw.shape}")
    paths, steps, noise = dw.shape
    if paths < MIN_PATHS:
        raise OracleError(f"regression needs at least {MIN_PATHS} paths, got {paths}")

    design = np.concatenate([np.ones((paths, steps, 1)), dw], axis=2)
    gram = np.einsum("msi,msj->sij", design, design)
    moment = np.einsum("msi,ms->si", design, y)
    beta = np.linalg.solve(gram, moment[..., None])[..., 0]

    # heteroskedasticity-robust (HC0) sandwich; coefficients vary across paths
    residual = y - np.einsum("msi,si->ms", design, beta)
    bread = np.linalg.inv(gram)
    meat = np.einsum("msi,ms,msj->sij", design, residual ** 2, design)
    cov = bread @ meat @ bread
    dof_scale = paths / max(paths - noise - 1, 1)
    se = np.sqrt(np.clip(np.diagonal(cov, axis1=1, axis2=2), 0.0, None) * dof_scale)

    return RegressionResult(
        intercept=beta[:, 0],
        intercept_se=se[:, 0],
        slopes=beta[:, 1:],
        slopes_se=se[:, 1:],
        paths_used=paths,
    )


def convergence_order(errors: Iterable[Tuple[float, float]]) -> ConvergenceFit:
    """
    Least-squares slope of log(error) against log(mesh).

    Args:
        errors: (mesh, error) pairs from at least three nested meshes

    Returns:
        ConvergenceFit with slope and its standard error

    Raises:
        OracleError: fewer than three points or a non-positive error
    """
    pairs = sorted((float(mesh), float(err)) for mesh, err in errors)
    if len(pairs) < 3:
        raise OracleError(f"convergence fit needs at least 3 meshes, got {len(pairs)}")
    meshes, values = zip(*pairs)
    if min(values) <= 0 or min(meshes) <= 0:
        raise OracleError("convergence fit requires positive meshes and errors")
    fit = stats.linregress(np.log(meshes), np.log(values))
    return ConvergenceFit(
        slope=float(fit.slope),
        stderr=float(fit.stderr),
        intercept=float(fit.intercept),
        meshes=tuple(meshes),
        errors=tuple(values),
    )


def kahan_sum(values: Iterable[float]) -> float:
    """Neumaier-compensated sum."""
    total = 0.0
    compensation = 0.0
    for value in values:
        value = float(value)
        candidate = total + value
        if abs(total) >= abs(value):
            compensation += (total - candidate) + value
        else:
            compensation += (value - candidate) + total
        total = candidate
    return total + compensation


def brute_force_aggregate(
    atoms: Sequence[Any],
    weights: Sequence[float],
    field_values: Sequence[float],
    growth_integrals: Sequence[float],
) -> float:
    """
    Σ_i w_i·exp(g_i)·f_i summed atom by atom in reverse order with compensation.

    Args:
        atoms: Type points (only their count is used)
        weights: Population weights w_i
        field_values: Field values f_i at the transported points
        growth_integrals: ∫h along each atom's path (log of Λ)

    Raises:
        OracleError: length mismatch
    """
    lengths = {len(atoms), len(weights), len(field_values), len(growth_integrals)}
    if len(lengths) != 1:
        raise OracleError(
            f"length mismatch: atoms={len(atoms)} weights={len(weights)} "
            f"field={len(field_values)} growth={len(growth_integrals)}"
        )
    terms = (
        float(w) * math.exp(float(g)) * float(f)
        for w, f, g in zip(reversed(list(weights)), reversed(list(field_values)),
                           reversed(list(growth_integrals)))
    )
    return kahan_sum(terms)
