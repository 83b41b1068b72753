"""
Population measures, their transport through the flow, and weighted aggregation.

A population is a finite set of type atoms with weights. Continuous populations
enter through midpoint quadrature nodes, so discrete and continuous cases share
one code path. Aggregates are computed per path and per grid step:

    ψ^μ_t = Σ_i w_i · Λ_t(x_i) · field(t, φ_t(x_i))

Example usage:
    from duesenberry.population import PopulationMeasure, aggregate

    mu = PopulationMeasure.discrete([[0.0], [1.0]], [0.5, 0.5])
    income = aggregate(ensemble, mu, lambda t, x: np.exp(x[..., 0]), provenance="income")
"""

import logging
from dataclasses import dataclass
from itertools import product
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np

from duesenberry.flow_engine import (
    Ensemble,
    FlowModel,
    TimeGrid,
    coarsen_increments,
    simulate_from_increments,
)
from duesenberry.utils.errors import AggregationError
from duesenberry.validation_oracle import (
    ConvergenceFit,
    StatTestReport,
    convergence_order,
    martingale_test,
)


# Configure logging
logger = logging.getLogger(__name__)


Field = Callable[[np.ndarray, np.ndarray], np.ndarray]

LOG_WEIGHT_GUARD = 300.0


@dataclass(frozen=True, eq=False)
class PopulationMeasure:
    """Finite collection of type atoms x_i with weights w_i."""
    points: np.ndarray
    weights: np.ndarray
    kind: Literal["discrete", "quadrature"] = "discrete"
    allow_signed: bool = False

    def __post_init__(self) -> None:
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if points.shape[0] != weights.shape[0]:
            raise AggregationError(
                f"{points.shape[0]} atoms but {weights.shape[0]} weights"
            )
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(weights))):
            raise AggregationError("population atoms and weights must be finite")
        if not self.allow_signed and np.any(weights <= 0):
            raise AggregationError("population weights must be positive")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    @classmethod
    def discrete(cls, points: Sequence[Sequence[float]] | np.ndarray,
                 weights: Sequence[float] | np.ndarray) -> "PopulationMeasure":
        return cls(np.asarray(points, dtype=float), np.asarray(weights, dtype=float), "discrete")

    @classmethod
    def from_box_quadrature(
        cls,
        lower: Sequence[float],
        upper: Sequence[float],
        cells: Sequence[int],
        density: Callable[[np.ndarray], np.ndarray],
    ) -> "PopulationMeasure":
        """
        Midpoint-rule nodes on a box partition of the type domain.

        Args:
            lower: Lower corner of the box
            upper: Upper corner of the box
            cells: Cells per dimension
            density: Population density g evaluated at nodes (..., d) -> (...)

        Returns:
            Quadrature measure with weights g(node)·cell volume
        """
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        counts = [int(c) for c in cells]
        if not (lo.shape == hi.shape == (len(counts),)) or np.any(hi <= lo) or min(counts) < 1:
            raise AggregationError("quadrature box needs matching bounds and positive cell counts")
        widths = (hi - lo) / np.asarray(counts)
        axes = [lo[k] + widths[k] * (np.arange(counts[k]) + 0.5) for k in range(len(counts))]
        nodes = np.array(list(product(*axes)), dtype=float)
        weights = np.asarray(density(nodes), dtype=float) * float(np.prod(widths))
        return cls(nodes, weights, "quadrature")

    def normalized(self) -> "PopulationMeasure":
        return PopulationMeasure(self.points, self.weights / self.total_mass, self.kind,
                                 self.allow_signed)

    def scaled(self, factor: float) -> "PopulationMeasure":
        return PopulationMeasure(self.points, self.weights * factor, self.kind, self.allow_signed)

    def check_domain(self, model: FlowModel) -> None:
        if not np.all(model.domain(self.points)):
            raise AggregationError("population atoms lie outside the model domain")


@dataclass(frozen=True, eq=False)
class AggregatePath:
    """ψ^μ per path and grid step; flagged paths hold NaN."""
    values: np.ndarray
    valid: np.ndarray
    provenance: str

    @property
    def path_mean(self) -> np.ndarray:
        """Cross-path mean over valid paths, per step."""
        return np.mean(self.values[self.valid], axis=0)


def _check_match(ensemble: Ensemble, measure: PopulationMeasure) -> None:
    if measure.size != ensemble.n_types:
        raise AggregationError(
            f"measure has {measure.size} atoms but the ensemble carries {ensemble.n_types} types"
        )


def _atom_weights(ensemble: Ensemble, measure: PopulationMeasure,
                  weights: Optional[np.ndarray]) -> np.ndarray:
    """Weights as (M, K): measure weights broadcast, or explicit per-path weights."""
    if weights is None:
        return np.broadcast_to(measure.weights, (ensemble.paths, measure.size))
    w = np.asarray(weights, dtype=float)
    if w.shape != (ensemble.paths, measure.size):
        raise AggregationError(
            f"per-path weights must have shape {(ensemble.paths, measure.size)}, got {w.shape}"
        )
    return w


def weighted_sum(
    ensemble: Ensemble,
    atom_weights: np.ndarray,
    values: np.ndarray,
    include_growth: bool = True,
) -> np.ndarray:
    """
    Σ_k w_k Λ_k values_k over the type axis, with log-space scaling of Λ.

    Args:
        ensemble: Source of log-weights
        atom_weights: (M, K)
        values: (M, K, N+1) or (M, K, N+1, n)
        include_growth: Multiply by Λ (False aggregates with initial weights only)

    Returns:
        (M, N+1) or (M, N+1, n)
    """
    extra = values.ndim - 3
    w = atom_weights[:, :, None]
    if not include_growth:
        factors = np.broadcast_to(w, values.shape[:3])
        return np.sum(factors.reshape(factors.shape + (1,) * extra) * values, axis=1)

    log_w = ensemble.log_weights
    if np.max(log_w, initial=0.0) > LOG_WEIGHT_GUARD:
        shift = np.max(log_w, axis=1, keepdims=True)
        factors = w * np.exp(log_w - shift)
        scaled = np.sum(factors.reshape(factors.shape + (1,) * extra) * values, axis=1)
        with np.errstate(over="ignore"):
            return scaled * np.exp(shift[:, 0]).reshape(shift.shape[0], -1, *((1,) * extra))
    factors = w * np.exp(log_w)
    return np.sum(factors.reshape(factors.shape + (1,) * extra) * values, axis=1)


def aggregate(
    ensemble: Ensemble,
    measure: PopulationMeasure,
    field: Field,
    provenance: str = "field",
    weights: Optional[np.ndarray] = None,
    include_growth: bool = True,
) -> AggregatePath:
    """
    Population-weighted aggregate of a per-type field along every path.

    Args:
        ensemble: Simulated flow
        measure: Population atoms matching the ensemble types one to one
        field: Callable (times (N+1,), states (M, K, N+1, d)) -> (M, K, N+1[, n])
        provenance: Label carried by the result
        weights: Optional per-path atom weights (M, K), e.g. a transported measure
        include_growth: Multiply by the population weights Λ

    Returns:
        AggregatePath with NaN on flagged paths

    Raises:
        AggregationError: atom/type mismatch or non-finite values on unflagged paths
    """
    _check_match(ensemble, measure)
    values = np.asarray(field(ensemble.grid.times, ensemble.states), dtype=float)
    if values.shape[:3] != ensemble.log_weights.shape:
        raise AggregationError(
            f"field returned shape {values.shape}, expected leading {ensemble.log_weights.shape}"
        )
    valid = ensemble.valid
    if not np.all(np.isfinite(values[valid])):
        raise AggregationError(f"non-finite values of '{provenance}' on unflagged paths")

    out = weighted_sum(ensemble, _atom_weights(ensemble, measure, weights), values, include_growth)
    out = np.array(out, dtype=float)
    out[~valid] = np.nan
    return AggregatePath(values=out, valid=valid.copy(), provenance=provenance)


def transport_measure(ensemble: Ensemble, measure: PopulationMeasure, t_index: int,
                      path: int) -> PopulationMeasure:
    """
    Realized population μ_t on one path: atoms φ_t(x_i) with weights w_i·Λ_t(x_i).

    Raises:
        AggregationError: bad indices, atom mismatch, or a flagged path
    """
    _check_match(ensemble, measure)
    if not 0 <= path < ensemble.paths:
        raise AggregationError(f"path {path} outside [0, {ensemble.paths - 1}]")
    if not 0 <= t_index <= ensemble.grid.steps:
        raise AggregationError(f"step {t_index} outside [0, {ensemble.grid.steps}]")
    if ensemble.flagged[path]:
        raise AggregationError(f"path {path} is flagged as exploded")
    return PopulationMeasure(
        points=ensemble.states[path, :, t_index].copy(),
        weights=measure.weights * np.exp(ensemble.log_weights[path, :, t_index]),
        kind=measure.kind,
        allow_signed=measure.allow_signed,
    )


def transported_weights(ensemble: Ensemble, measure: PopulationMeasure,
                        t_index: int) -> np.ndarray:
    """Per-path weights w_i·Λ_t(x_i), shape (M, K), for re-aggregation after a restart."""
    _check_match(ensemble, measure)
    return measure.weights[None, :] * np.exp(ensemble.log_weights[:, :, t_index])


# ==============================================================================
# Aggregated Itô formula
# ==============================================================================

@dataclass(frozen=True)
class ItoTestFunction:
    """Smooth f(t, x) with its time derivative, gradient (..., d) and Hessian (..., d, d)."""
    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    time_derivative: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray, np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class ItoAggregationReport:
    mesh: float
    max_step_residual: float
    horizon_residual: float
    raw_max_step_residual: float
    raw_horizon_residual: float
    step_residuals: np.ndarray


def _ito_terms(ensemble: Ensemble, f: ItoTestFunction) -> Tuple[np.ndarray, ...]:
    """Left-point drift, martingale and quadratic-variation terms per path/type/step."""
    model = ensemble.model
    dt = ensemble.grid.dt
    t = ensemble.grid.times[:-1]
    x = ensemble.states[:, :, :-1]
    dw = ensemble.increments[:, None, :, :]

    grad = f.gradient(t[None, None, :], x)
    hess = f.hessian(t[None, None, :], x)
    rho = model.drift(x)
    sigma = model.diffusion(x)
    a = np.einsum("...ik,...jk->...ij", sigma, sigma)

    drift = (
        f.time_derivative(t[None, None, :], x)
        + np.sum(grad * rho, axis=-1)
        + 0.5 * np.einsum("...ij,...ij->...", hess, a)
    ) * dt
    noise = np.einsum("...i,...ik,...k->...", grad, sigma, dw)
    sigma_dw = np.einsum("...ik,...k->...i", sigma, dw)
    quad = 0.5 * (np.einsum("...i,...ij,...j->...", sigma_dw, hess, sigma_dw)
                  - np.einsum("...ij,...ij->...", hess, a) * dt)
    return drift, noise, quad


def verify_ito_aggregation(ensemble: Ensemble, measure: PopulationMeasure,
                           f: ItoTestFunction) -> ItoAggregationReport:
    """
    Compare simulated increments of ∫f(t, φ_t(x))dμ with the aggregated Itô expansion.

    The raw residual carries the zero-mean quadratic-variation fluctuation
    ½(ϱΔW)ᵀ∇²f(ϱΔW) − ½tr(∇²f a)Δt; the reported residual removes it, which
    leaves the O(Δt) remainder over the horizon.

    Raises:
        AggregationError: atom mismatch or a non-zero growth rate
    """
    _check_match(ensemble, measure)
    if np.any(ensemble.log_weights != 0.0):
        raise AggregationError("the aggregated Itô check runs on unweighted populations (h = 0)")

    valid = ensemble.valid
    values = f.value(ensemble.grid.times[None, None, :], ensemble.states)
    totals = np.einsum("k,mkj->mj", measure.weights, values)
    drift, noise, quad = _ito_terms(ensemble, f)
    rhs = np.einsum("k,mkj->mj", measure.weights, drift + noise)
    correction = np.einsum("k,mkj->mj", measure.weights, quad)

    raw = (np.diff(totals, axis=1) - rhs)[valid]
    compensated = raw - correction[valid]
    step_mean = np.mean(np.abs(compensated), axis=0)
    return ItoAggregationReport(
        mesh=ensemble.grid.dt,
        max_step_residual=float(np.max(np.abs(compensated), initial=0.0)),
        horizon_residual=float(np.mean(np.abs(np.sum(compensated, axis=1)))),
        raw_max_step_residual=float(np.max(np.abs(raw), initial=0.0)),
        raw_horizon_residual=float(np.mean(np.abs(np.sum(raw, axis=1)))),
        step_residuals=step_mean,
    )


def ito_aggregation_mesh_study(
    model: FlowModel,
    measure: PopulationMeasure,
    grid: TimeGrid,
    increments: np.ndarray,
    f: ItoTestFunction,
    factors: Sequence[int] = (1, 2, 4),
) -> Tuple[List[ItoAggregationReport], ConvergenceFit]:
    """
    Horizon residuals on nested grids built from one fine increment stream.

    Returns:
        Reports (finest first) and the fitted order of horizon residual vs mesh
    """
    reports = []
    for factor in factors:
        coarse = simulate_from_increments(
            model, grid.coarsen(factor), measure.points, coarsen_increments(increments, factor)
        )
        reports.append(verify_ito_aggregation(coarse, measure, f))
    fit = convergence_order([(r.mesh, r.horizon_residual) for r in reports])
    logger.info(f"Itô aggregation residual order {fit.slope:.3f} ± {fit.stderr:.3f}")
    return reports, fit


def aggregate_drift_report(
    ensemble: Ensemble,
    measure: PopulationMeasure,
    f: ItoTestFunction,
    confidence_sigmas: float = 3.0,
) -> StatTestReport:
    """
    Drift decomposition of a weighted aggregate as a martingale test.

    Per path and step, Δψ^μ minus Σ w Λ (∂_t f + ∇f·ρ + ½tr(∇²f a) + h f)Δt
    must have zero cross-path mean.
    """
    _check_match(ensemble, measure)
    model = ensemble.model
    dt = ensemble.grid.dt
    values = f.value(ensemble.grid.times[None, None, :], ensemble.states)
    atom_w = _atom_weights(ensemble, measure, None)
    psi = weighted_sum(ensemble, atom_w, values)

    drift, _, _ = _ito_terms(ensemble, f)
    growth_term = model.growth(ensemble.states[:, :, :-1]) * values[:, :, :-1] * dt
    lam = np.exp(ensemble.log_weights[:, :, :-1])
    expected = np.sum(atom_w[:, :, None] * lam * (drift + growth_term), axis=1)
    return martingale_test(
        np.diff(psi, axis=1) - expected,
        name="aggregate drift decomposition",
        confidence_sigmas=confidence_sigmas,
        valid=ensemble.valid,
    )
