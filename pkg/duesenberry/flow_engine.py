"""
Brownian type flow simulation under common noise.

This module provides:
- FlowModel: vectorized coefficient fields on the type space
- TimeGrid: uniform simulation grids with nested coarsening
- Ensemble: seeded paths of the flow and of the population weights
- simulate_flow / simulate_from_increments / restart_flow / verify_cocycles
- feller_nonexplosion_1d: a log-stable 1-d Feller test

Every type on a path is driven by the same increment stream, so the whole
cross-section moves as one random map of the type space. Per-path seeds come
from numpy's SeedSequence spawning, which keeps results independent of chunking
and of the thread count.

Example usage:
    from duesenberry.flow_engine import FlowModel, TimeGrid, simulate_flow

    ou = FlowModel.ornstein_uhlenbeck(mean_reversion=1.0, volatility=1.0)
    ensemble = simulate_flow(ou, TimeGrid(0.0, 1.0, 100), types=[[0.5]], paths=1000, seed=7)
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from duesenberry.utils.errors import ModelError, SimulationError
from duesenberry.utils.run_helpers import get_settings


# Configure logging
logger = logging.getLogger(__name__)


VectorField = Callable[[np.ndarray], np.ndarray]

CHUNK_PATHS = 256
MAX_FLAGGED_FRACTION = 0.5


def _always_inside(states: np.ndarray) -> np.ndarray:
    return np.ones(states.shape[:-1], dtype=bool)


def _zero_scalar(states: np.ndarray) -> np.ndarray:
    return np.zeros(states.shape[:-1])


@dataclass(frozen=True)
class FlowModel:
    """
    Structural primitives of the economy on a d-dimensional type space.

    All fields are vectorized over leading axes: a states array of shape
    (..., d) maps to drift (..., d), diffusion (..., d, n), and scalars (...).
    """
    dimension: int
    noise_dimension: int
    drift: VectorField
    diffusion: VectorField
    impatience: VectorField
    growth: VectorField = _zero_scalar
    domain: VectorField = _always_inside
    impatience_gradient: Optional[VectorField] = None
    impatience_bounds: Tuple[float, float] = (1e-4, 1.0)
    growth_bounds: Tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self) -> None:
        if self.dimension < 1 or self.noise_dimension < 1:
            raise ModelError("type and noise dimensions must be positive")
        lower, upper = self.impatience_bounds
        if not (0.0 < lower <= upper):
            raise ModelError(
                f"impatience bounds must satisfy 0 < lower <= upper, got {self.impatience_bounds}"
            )
        if self.growth_bounds[0] > self.growth_bounds[1]:
            raise ModelError(f"growth bounds are inverted: {self.growth_bounds}")

    @property
    def impatience_lower(self) -> float:
        return self.impatience_bounds[0]

    def check_bounds(self, states: np.ndarray, valid: Optional[np.ndarray] = None) -> None:
        """
        Verify γ and h stay inside their declared bounds on sampled states.

        Args:
            states: Array (..., d); when valid is given its leading axis is paths
            valid: Optional path mask

        Raises:
            ModelError: a sampled value leaves its bounds
        """
        sample = states if valid is None else states[np.asarray(valid, dtype=bool)]
        if sample.size == 0:
            return
        gamma = self.impatience(sample)
        lower, upper = self.impatience_bounds
        if np.min(gamma) < lower or np.max(gamma) > upper:
            raise ModelError(
                f"impatience left [{lower}, {upper}]: sampled range "
                f"[{np.min(gamma):.6g}, {np.max(gamma):.6g}]"
            )
        growth = self.growth(sample)
        if np.min(growth) < self.growth_bounds[0] or np.max(growth) > self.growth_bounds[1]:
            raise ModelError(
                f"growth rate left {self.growth_bounds}: sampled range "
                f"[{np.min(growth):.6g}, {np.max(growth):.6g}]"
            )

    @classmethod
    def ornstein_uhlenbeck(
        cls,
        mean_reversion: float = 1.0,
        volatility: float = 1.0,
        impatience_rate: float = 0.02,
        growth_rate: float = 0.0,
    ) -> "FlowModel":
        """Scalar OU flow dφ = −θφ dt + s dW with constant γ and h."""
        def drift(x: np.ndarray) -> np.ndarray:
            return -mean_reversion * x

        def diffusion(x: np.ndarray) -> np.ndarray:
            return np.full(x.shape + (1,), volatility)

        def impatience(x: np.ndarray) -> np.ndarray:
            return np.full(x.shape[:-1], impatience_rate)

        def growth(x: np.ndarray) -> np.ndarray:
            return np.full(x.shape[:-1], growth_rate)

        return cls(
            dimension=1,
            noise_dimension=1,
            drift=drift,
            diffusion=diffusion,
            impatience=impatience,
            growth=growth,
            impatience_bounds=(impatience_rate, impatience_rate),
            growth_bounds=(min(growth_rate, 0.0), max(growth_rate, 0.0)),
        )


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0 < t0+Δt < … < horizon with N steps."""
    t0: float
    horizon: float
    steps: int
    dt: float = field(default=0.0)

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise SimulationError(f"grid needs at least one step, got {self.steps}")
        if not self.horizon > self.t0:
            raise SimulationError(f"horizon {self.horizon} must exceed t0 {self.t0}")
        if self.dt == 0.0:
            object.__setattr__(self, "dt", (self.horizon - self.t0) / self.steps)
        if self.dt <= 0.0:
            raise SimulationError("grid spacing must be positive")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    @property
    def elapsed(self) -> np.ndarray:
        """Time since t0 at every grid point."""
        return self.dt * np.arange(self.steps + 1)

    def tail(self, s_index: int) -> "TimeGrid":
        """Grid re-indexed from t_s that keeps the original spacing bit for bit."""
        if not 0 <= s_index < self.steps:
            raise SimulationError(f"restart index {s_index} outside [0, {self.steps - 1}]")
        if s_index == 0:
            return self
        return TimeGrid(
            t0=float(self.times[s_index]),
            horizon=self.horizon,
            steps=self.steps - s_index,
            dt=self.dt,
        )

    def coarsen(self, factor: int) -> "TimeGrid":
        if factor < 1 or self.steps % factor:
            raise SimulationError(f"cannot coarsen {self.steps} steps by {factor}")
        return TimeGrid(self.t0, self.horizon, self.steps // factor)


@dataclass(frozen=True, eq=False)
class Ensemble:
    """
    Seeded simulation of the flow and the population weights.

    Shapes (M paths, K types, N steps, d type dims, n noise dims):
        types            (K, d)        type labels x_i
        initial_states   (M, K, d)     φ at the grid start
        increments       (M, N, n)     common Brownian increments
        states           (M, K, N+1, d)
        log_weights      (M, K, N+1)   log Λ, zero at the grid start
        flagged          (M,)          explosion flags
    """
    model: FlowModel
    grid: TimeGrid
    seed: Optional[int]
    types: np.ndarray
    initial_states: np.ndarray
    increments: np.ndarray
    states: np.ndarray
    log_weights: np.ndarray
    flagged: np.ndarray

    @property
    def paths(self) -> int:
        return int(self.states.shape[0])

    @property
    def n_types(self) -> int:
        return int(self.states.shape[1])

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def valid(self) -> np.ndarray:
        return ~self.flagged

    @property
    def flagged_fraction(self) -> float:
        return float(np.mean(self.flagged)) if self.flagged.size else 0.0


def path_increments(seed: int, paths: int, steps: int, noise_dimension: int,
                    dt: float) -> np.ndarray:
    """
    Brownian increments (M, N, n), one spawned generator per path.

    Path p's stream depends only on (seed, p), so any subset or chunking of the
    paths regenerates identical numbers.
    """
    children = np.random.SeedSequence(seed).spawn(paths)
    scale = math.sqrt(dt)
    out = np.empty((paths, steps, noise_dimension))
    for p, child in enumerate(children):
        out[p] = np.random.default_rng(child).standard_normal((steps, noise_dimension)) * scale
    return out


def coarsen_increments(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum adjacent increments so a coarse grid sees the same Brownian path."""
    paths, steps, noise = increments.shape
    if factor < 1 or steps % factor:
        raise SimulationError(f"cannot coarsen {steps} increments by {factor}")
    return increments.reshape(paths, steps // factor, factor, noise).sum(axis=2)


def _check_initial(model: FlowModel, initial: np.ndarray) -> None:
    if initial.shape[-1] != model.dimension:
        raise SimulationError(
            f"type points have dimension {initial.shape[-1]}, model expects {model.dimension}"
        )
    if not np.all(model.domain(initial)):
        raise SimulationError("some initial type points lie outside the domain")
    with np.errstate(all="ignore"):
        checks = {
            "drift": model.drift(initial),
            "diffusion": model.diffusion(initial),
            "growth": model.growth(initial),
            "impatience": model.impatience(initial),
        }
    for name, values in checks.items():
        if not np.all(np.isfinite(values)):
            raise SimulationError(f"non-finite {name} coefficient at an initial type point")
    expected = initial.shape + (model.noise_dimension,)
    if checks["diffusion"].shape != expected:
        raise SimulationError(
            f"diffusion returned shape {checks['diffusion'].shape}, expected {expected}"
        )


def _integrate_chunk(
    model: FlowModel,
    dt: float,
    initial: np.ndarray,
    increments: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Euler–Maruyama over a block of paths; exploding paths freeze and flag."""
    paths, n_types, dim = initial.shape
    steps = increments.shape[1]
    states = np.empty((paths, n_types, steps + 1, dim))
    states[:, :, 0] = initial
    active = np.ones(paths, dtype=bool)
    x = initial.copy()

    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(steps):
            drift = model.drift(x)
            diffusion = model.diffusion(x)
            dw = increments[:, j]
            candidate = x + drift * dt
            # noise columns accumulate in a fixed order
            for k in range(model.noise_dimension):
                candidate = candidate + diffusion[..., k] * dw[:, None, None, k]
            inside = np.all(np.isfinite(candidate), axis=-1) & model.domain(candidate)
            exploded = active & ~np.all(inside, axis=1)
            active = active & ~exploded
            x = np.where(active[:, None, None], candidate, x)
            states[:, :, j + 1] = x

    return states, ~active


def simulate_from_increments(
    model: FlowModel,
    grid: TimeGrid,
    types: Sequence[Sequence[float]] | np.ndarray,
    increments: np.ndarray,
    seed: Optional[int] = None,
    initial_states: Optional[np.ndarray] = None,
    threads: Optional[int] = None,
) -> Ensemble:
    """
    Simulate the flow on explicit Brownian increments.

    Args:
        model: Flow coefficients
        grid: Time grid whose steps match increments.shape[1]
        types: Type labels (K, d); also the initial points unless initial_states is given
        increments: Array (M, N, n)
        seed: Seed recorded on the ensemble (None for externally supplied noise)
        initial_states: Optional per-path starting points (M, K, d)
        threads: Worker threads (defaults to runtime settings)

    Returns:
        Ensemble with states, log-weights and explosion flags

    Raises:
        SimulationError: bad shapes, non-finite initial coefficients,
            or more than half the paths exploding
    """
    type_points = np.atleast_2d(np.asarray(types, dtype=float))
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 3 or increments.shape[2] != model.noise_dimension:
        raise SimulationError(
            f"increments must have shape (paths, steps, {model.noise_dimension}), "
            f"got {increments.shape}"
        )
    paths, steps, _ = increments.shape
    if paths < 1:
        raise SimulationError("need at least one path")
    if steps != grid.steps:
        raise SimulationError(f"{steps} increments for a grid of {grid.steps} steps")

    if initial_states is None:
        initial = np.broadcast_to(type_points, (paths,) + type_points.shape).copy()
    else:
        initial = np.asarray(initial_states, dtype=float)
        if initial.shape != (paths,) + type_points.shape:
            raise SimulationError(
                f"initial states shape {initial.shape} does not match "
                f"{(paths,) + type_points.shape}"
            )
    _check_initial(model, initial)

    workers = threads if threads is not None else get_settings().threads
    bounds = [(lo, min(lo + CHUNK_PATHS, paths)) for lo in range(0, paths, CHUNK_PATHS)]
    states = np.empty((paths, type_points.shape[0], steps + 1, model.dimension))
    flagged = np.zeros(paths, dtype=bool)

    def run(bound: Tuple[int, int]) -> None:
        lo, hi = bound
        chunk_states, chunk_flags = _integrate_chunk(
            model, grid.dt, initial[lo:hi], increments[lo:hi]
        )
        states[lo:hi] = chunk_states
        flagged[lo:hi] = chunk_flags

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, bounds))
    else:
        for bound in bounds:
            run(bound)

    fraction = float(np.mean(flagged))
    if fraction > MAX_FLAGGED_FRACTION:
        raise SimulationError(
            f"{fraction:.1%} of paths left the domain or became non-finite; "
            "the scenario looks ill-posed"
        )
    if fraction > 0:
        logger.warning(f"{int(flagged.sum())} of {paths} paths flagged as exploded and frozen")

    with np.errstate(over="ignore", invalid="ignore"):
        growth = model.growth(states)
    log_weights = cumulative_trapezoid(growth, dx=grid.dt, axis=-1, initial=0.0)

    return Ensemble(
        model=model,
        grid=grid,
        seed=seed,
        types=type_points,
        initial_states=initial,
        increments=increments,
        states=states,
        log_weights=log_weights,
        flagged=flagged,
    )


def simulate_flow(
    model: FlowModel,
    grid: TimeGrid,
    types: Sequence[Sequence[float]] | np.ndarray,
    paths: int,
    seed: int,
    threads: Optional[int] = None,
) -> Ensemble:
    """
    Euler–Maruyama simulation of φ_{t0,t}(x) for every type on a shared noise stream.

    Args:
        model: Flow coefficients
        grid: Uniform time grid
        types: Initial type points (K, d), all inside the domain
        paths: Number of Monte Carlo paths M
        seed: Master seed; per-path streams are spawned from it
        threads: Worker threads (defaults to runtime settings)

    Returns:
        Ensemble

    Raises:
        SimulationError: invalid sizes, bad initial coefficients, explosions on >50% of paths
    """
    if paths < 1:
        raise SimulationError(f"need at least one path, got {paths}")
    increments = path_increments(seed, paths, grid.steps, model.noise_dimension, grid.dt)
    logger.debug(f"simulating {paths} paths x {grid.steps} steps (seed={seed})")
    return simulate_from_increments(model, grid, types, increments, seed=seed, threads=threads)


def restart_flow(ensemble: Ensemble, s_index: int) -> Ensemble:
    """
    Re-simulate the flow from t_s with the stored increments.

    The new ensemble starts at φ_{t0,t_s}(x) with weights reset to one, so its
    states are φ_{s,t}∘φ_{t0,s} and its weights are Λ_{s,t} at the transported points.

    Raises:
        SimulationError: index out of range
    """
    grid = ensemble.grid.tail(s_index)
    restarted = simulate_from_increments(
        ensemble.model,
        grid,
        ensemble.types,
        ensemble.increments[:, s_index:],
        seed=ensemble.seed,
        initial_states=ensemble.states[:, :, s_index],
    )
    if not ensemble.flagged.any():
        return restarted
    return Ensemble(
        model=restarted.model,
        grid=restarted.grid,
        seed=restarted.seed,
        types=restarted.types,
        initial_states=restarted.initial_states,
        increments=restarted.increments,
        states=restarted.states,
        log_weights=restarted.log_weights,
        flagged=restarted.flagged | ensemble.flagged,
    )


@dataclass
class CocycleReport:
    s_index: int
    flow_max_abs_diff: float
    flow_bitwise: bool
    weight_max_rel_diff: float
    tolerance: float = 1e-12

    @property
    def passed(self) -> bool:
        return self.flow_bitwise and self.weight_max_rel_diff <= self.tolerance

    def summary(self) -> Dict[str, Any]:
        return {
            "s_index": self.s_index,
            "flow_max_abs_diff": self.flow_max_abs_diff,
            "flow_bitwise": self.flow_bitwise,
            "weight_max_rel_diff": self.weight_max_rel_diff,
            "passed": self.passed,
        }


def verify_cocycles(ensemble: Ensemble, s_index: int, tolerance: float = 1e-12) -> CocycleReport:
    """
    Compare the ensemble with its restart at t_s on unflagged paths.

    Flow: φ_{r,t} must equal φ_{s,t}∘φ_{r,s} bit for bit.
    Weights: Λ_{r,t} = Λ_{r,s}·Λ_{s,t}(φ_{r,s}) to relative tolerance.
    """
    restarted = restart_flow(ensemble, s_index)
    valid = ~restarted.flagged
    direct = ensemble.states[valid][:, :, s_index:]
    composed = restarted.states[valid]
    flow_diff = float(np.max(np.abs(direct - composed), initial=0.0))

    head = ensemble.log_weights[valid][:, :, s_index:s_index + 1]
    log_direct = ensemble.log_weights[valid][:, :, s_index:]
    log_composed = head + restarted.log_weights[valid]
    # |Λ₁/Λ₂ − 1| computed on the log scale
    rel = np.abs(np.expm1(log_direct - log_composed))
    report = CocycleReport(
        s_index=s_index,
        flow_max_abs_diff=flow_diff,
        flow_bitwise=bool(np.array_equal(direct, composed)),
        weight_max_rel_diff=float(np.max(rel, initial=0.0)),
        tolerance=tolerance,
    )
    logger.debug(f"cocycle at s={s_index}: flow diff {flow_diff:.3e}, "
                 f"weight rel diff {report.weight_max_rel_diff:.3e}")
    return report


def pathwise_integral(ensemble: Ensemble, values: np.ndarray) -> np.ndarray:
    """Trapezoidal cumulative time integral of per-type values (M, K, N+1)."""
    return cumulative_trapezoid(values, dx=ensemble.grid.dt, axis=-1, initial=0.0)


def left_point_integral(values: np.ndarray, dt: float) -> np.ndarray:
    """
    Non-anticipating cumulative integral Σ_{i<j} values_i·Δt along the last axis.

    The value at step j+1 only uses values up to step j, so integrals of
    γ∘φ are known one step ahead and carry no Brownian loading.
    """
    out = np.zeros(values.shape)
    np.cumsum(values[..., :-1] * dt, axis=-1, out=out[..., 1:])
    return out


# ==============================================================================
# 1-d Feller test
# ==============================================================================

class FellerVerdict(str, Enum):
    NON_EXPLOSIVE = "non-explosive"
    INCONCLUSIVE = "inconclusive"


@dataclass
class FellerReport:
    verdict: FellerVerdict
    divergent_up: bool
    divergent_down: bool
    radii_up: np.ndarray
    radii_down: np.ndarray
    k_up: np.ndarray
    k_down: np.ndarray
    growth_ratio_up: float
    growth_ratio_down: float


def _feller_direction(
    drift: Callable[[np.ndarray], np.ndarray],
    diffusion: Callable[[np.ndarray], np.ndarray],
    radius: float,
    points: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """K(z) on [0, radius] via G(z) = ∫₀^z exp(2(S(y) − S(z)))/ϱ²(y) dy."""
    z = np.linspace(0.0, radius, points)
    sigma = np.asarray(diffusion(z), dtype=float)
    if np.any(~np.isfinite(sigma)) or np.any(np.abs(sigma) < 1e-150):
        raise ModelError("diffusion vanishes or is non-finite on the probe range")
    inv_var = 1.0 / sigma ** 2
    scale = cumulative_trapezoid(np.asarray(drift(z), dtype=float) * inv_var, z, initial=0.0)
    dz = np.diff(z)
    g = np.zeros(points)
    with np.errstate(over="ignore", invalid="ignore"):
        decay = np.exp(2.0 * (scale[:-1] - scale[1:]))
        for k in range(points - 1):
            g[k + 1] = g[k] * decay[k] + 0.5 * dz[k] * (decay[k] * inv_var[k] + inv_var[k + 1])
        k_values = cumulative_trapezoid(2.0 * g, z, initial=0.0)
    return z, k_values


def _divergence(z: np.ndarray, k_values: np.ndarray, threshold: float,
                tolerance: float) -> Tuple[bool, np.ndarray, np.ndarray, float]:
    radius = z[-1]
    radii = radius / 2.0 ** np.arange(5, -1, -1)
    at_radii = np.interp(radii, z, k_values)
    if not np.isfinite(k_values[-1]) or k_values[-1] > threshold:
        return True, radii, at_radii, math.inf
    last = at_radii[-1] - at_radii[-2]
    previous = at_radii[-2] - at_radii[-3]
    ratio = math.inf if previous <= 0 else float(last / previous)
    return ratio >= 1.0 - tolerance, radii, at_radii, ratio


def feller_nonexplosion_1d(
    drift: Callable[[np.ndarray], np.ndarray],
    diffusion: Callable[[np.ndarray], np.ndarray],
    probe_range: Tuple[float, float] = (-10.0, 10.0),
    tolerance: float = 0.1,
    threshold: float = 1e12,
    points: int = 4096,
) -> FellerReport:
    """
    Sufficient 1-d test for non-explosion of dX = ρ(X)dt + ϱ(X)dW.

    Evaluates K(x) = ∫₀^x 2c⁻¹(z)∫₀^z c(y)/ϱ²(y) dy dz with c = exp(2∫ρ/ϱ²)
    on radii doubling up to each end of the probe range. A direction counts
    as divergent when K passes the threshold (or overflows) or when its last
    doubling increment is not smaller than the previous one.

    Args:
        drift: Scalar drift ρ, vectorized
        diffusion: Scalar diffusion ϱ, vectorized
        probe_range: Interval (lower, upper) with lower < 0 < upper
        tolerance: Slack on the growth-ratio criterion
        threshold: K level taken as divergence
        points: Quadrature points per direction

    Returns:
        FellerReport; NON_EXPLOSIVE only when both directions diverge

    Raises:
        ModelError: ϱ vanishes on the probe range, or the range does not straddle 0
    """
    lower, upper = probe_range
    if not lower < 0.0 < upper:
        raise ModelError(f"probe range {probe_range} must contain the origin in its interior")

    z_up, k_up = _feller_direction(drift, diffusion, upper, points)
    z_down, k_down = _feller_direction(
        lambda u: -np.asarray(drift(-u), dtype=float),
        lambda u: np.asarray(diffusion(-u), dtype=float),
        -lower,
        points,
    )
    up, radii_up, at_up, ratio_up = _divergence(z_up, k_up, threshold, tolerance)
    down, radii_down, at_down, ratio_down = _divergence(z_down, k_down, threshold, tolerance)
    verdict = FellerVerdict.NON_EXPLOSIVE if up and down else FellerVerdict.INCONCLUSIVE
    logger.debug(f"Feller test: up={up} (ratio {ratio_up:.3g}), down={down} (ratio {ratio_down:.3g})")
    return FellerReport(
        verdict=verdict,
        divergent_up=up,
        divergent_down=down,
        radii_up=radii_up,
        radii_down=-radii_down,
        k_up=at_up,
        k_down=at_down,
        growth_ratio_up=ratio_up,
        growth_ratio_down=ratio_down,
    )


def feller_for_model(model: FlowModel, probe_range: Tuple[float, float] = (-10.0, 10.0),
                     tolerance: float = 0.1) -> FellerReport:
    """Feller test for a d = n = 1 FlowModel."""
    if model.dimension != 1 or model.noise_dimension != 1:
        raise ModelError("the Feller test needs a scalar flow (d = n = 1)")
    return feller_nonexplosion_1d(
        lambda z: model.drift(z[:, None])[:, 0],
        lambda z: model.diffusion(z[:, None])[:, 0, 0],
        probe_range,
        tolerance,
    )
