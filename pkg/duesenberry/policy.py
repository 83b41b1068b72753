"""
Optimal consumption and investment along the flow.

Three policies share one construction and differ only in how the impatience
integral ∫γ is accumulated:

- fixed γ: γ(x) at the initial type, times elapsed time
- rolling: γ frozen at each partition point, re-read at the next
- limit: left-point integral of γ(φ_u(x)) on the simulation grid

Given the integral G_t(x) and the current rate,

    ξ_t − L_t = y(x)·e^{−G_t(x)}·H_0/H_t
    c_t       = rate_t(x)·(ξ_t − L_t)
    π_t       = (ξ_t − L_t)·κ_t − ϖ_t(x)
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from duesenberry.flow_engine import Ensemble, TimeGrid, pathwise_integral
from duesenberry.population import PopulationMeasure
from duesenberry.preferences import IsoelasticPreference, u1, u2
from duesenberry.utils.errors import PolicyError


# Configure logging
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Partition:
    """Grid indices 0 = s₀ < s₁ < … < s_m = N."""
    indices: Tuple[int, ...]

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.indices)
        if len(idx) < 2 or idx[0] != 0:
            raise PolicyError(f"partition must start at 0 and have an end point: {idx}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise PolicyError(f"partition indices must increase strictly: {idx}")
        object.__setattr__(self, "indices", idx)

    @property
    def end(self) -> int:
        return self.indices[-1]

    @classmethod
    def uniform(cls, grid: TimeGrid, mesh: float) -> "Partition":
        """Equal subintervals of length mesh; mesh must be a multiple of Δt dividing the grid."""
        stride = int(round(mesh / grid.dt))
        if stride < 1 or abs(stride * grid.dt - mesh) > 1e-9 * max(mesh, 1.0) or grid.steps % stride:
            raise PolicyError(f"mesh {mesh} is not compatible with grid spacing {grid.dt}")
        return cls(tuple(range(0, grid.steps + 1, stride)))

    @classmethod
    def single(cls, grid: TimeGrid) -> "Partition":
        return cls((0, grid.steps))

    @classmethod
    def full(cls, grid: TimeGrid) -> "Partition":
        return cls(tuple(range(grid.steps + 1)))


@dataclass(frozen=True, eq=False)
class PolicyPath:
    """Per-type policy arrays (M, K, N+1) plus the market inputs they were built from."""
    kind: str
    net_wealth: np.ndarray
    wealth: np.ndarray
    consumption: np.ndarray
    portfolio: np.ndarray
    rate: np.ndarray
    impatience_integral: np.ndarray
    state_price: np.ndarray
    kappa: np.ndarray
    subsistence: np.ndarray
    hedge: np.ndarray
    initial_net_wealth: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True, eq=False)
class AggregatePolicy:
    """Population aggregates (M, N+1) of a PolicyPath."""
    wealth: np.ndarray
    net_wealth: np.ndarray
    consumption: np.ndarray
    portfolio: np.ndarray
    subsistence: np.ndarray


def _market_inputs(
    ensemble: Ensemble,
    state_price: np.ndarray,
    kappa: np.ndarray | float,
    y: Sequence[float] | np.ndarray,
    subsistence: Optional[np.ndarray],
    hedge: Optional[np.ndarray],
) -> Tuple[np.ndarray, ...]:
    shape = (ensemble.paths, ensemble.grid.steps + 1)
    typed = (ensemble.paths, ensemble.n_types, ensemble.grid.steps + 1)
    H = np.asarray(state_price, dtype=float)
    if H.shape != shape:
        raise PolicyError(f"state price must have shape {shape}, got {H.shape}")
    valid = ensemble.valid
    if np.any(~np.isfinite(H[valid])) or np.any(H[valid] <= 0):
        raise PolicyError("state price must be positive on every unflagged path")
    k = np.broadcast_to(np.asarray(kappa, dtype=float), shape)
    y_arr = np.asarray(y, dtype=float).reshape(-1)
    if y_arr.shape != (ensemble.n_types,):
        raise PolicyError(f"initial net wealth needs {ensemble.n_types} entries, got {y_arr.shape}")
    if np.any(y_arr < 0):
        raise PolicyError("initial net wealth must be non-negative")
    L = np.zeros(typed) if subsistence is None else np.asarray(subsistence, dtype=float)
    w = np.zeros(typed) if hedge is None else np.asarray(hedge, dtype=float)
    if L.shape != typed or w.shape != typed:
        raise PolicyError(f"endowment value and hedge must have shape {typed}")
    return H, k, y_arr, L, w


def _assemble(
    kind: str,
    ensemble: Ensemble,
    integral: np.ndarray,
    rate: np.ndarray,
    state_price: np.ndarray,
    kappa: np.ndarray | float,
    y: Sequence[float] | np.ndarray,
    subsistence: Optional[np.ndarray],
    hedge: Optional[np.ndarray],
) -> PolicyPath:
    H, k, y_arr, L, w = _market_inputs(ensemble, state_price, kappa, y, subsistence, hedge)
    deflator = (H[:, :1] / H)[:, None, :]
    net = y_arr[None, :, None] * np.exp(-integral) * deflator
    return PolicyPath(
        kind=kind,
        net_wealth=net,
        wealth=L + net,
        consumption=rate * net,
        portfolio=net * k[:, None, :] - w,
        rate=rate,
        impatience_integral=integral,
        state_price=H,
        kappa=np.array(k),
        subsistence=L,
        hedge=w,
        initial_net_wealth=y_arr,
        valid=ensemble.valid,
    )


def optimal_policy_fixed_gamma(
    ensemble: Ensemble,
    state_price: np.ndarray,
    kappa: np.ndarray | float,
    y: Sequence[float] | np.ndarray,
    subsistence: Optional[np.ndarray] = None,
    hedge: Optional[np.ndarray] = None,
) -> PolicyPath:
    """
    Closed-form optimum when γ stays at its value at the initial type.

    Raises:
        PolicyError: non-positive H or mismatched shapes
    """
    gamma0 = ensemble.model.impatience(ensemble.initial_states)
    integral = gamma0[:, :, None] * ensemble.grid.elapsed[None, None, :]
    rate = np.broadcast_to(gamma0[:, :, None], integral.shape)
    return _assemble("fixed_gamma", ensemble, integral, rate, state_price, kappa, y,
                     subsistence, hedge)


def rolling_policy(
    ensemble: Ensemble,
    partition: Partition,
    state_price: np.ndarray,
    kappa: np.ndarray | float,
    y: Sequence[float] | np.ndarray,
    subsistence: Optional[np.ndarray] = None,
    hedge: Optional[np.ndarray] = None,
) -> PolicyPath:
    """
    Short-horizon scheme: on [s_k, s_{k+1}) the rate is γ(φ_{s_k}(x)).

    Raises:
        PolicyError: partition not ending at the grid end, non-positive H
    """
    steps = ensemble.grid.steps
    if partition.end != steps:
        raise PolicyError(f"partition ends at {partition.end}, grid has {steps} steps")
    idx = np.asarray(partition.indices)
    elapsed = ensemble.grid.elapsed
    frozen = ensemble.model.impatience(ensemble.states[:, :, idx[:-1]])

    completed = np.zeros(frozen.shape)
    lengths = np.diff(elapsed[idx])
    for k in range(1, len(idx) - 1):
        completed[:, :, k] = completed[:, :, k - 1] + frozen[:, :, k - 1] * lengths[k - 1]

    owner = np.searchsorted(idx, np.arange(steps + 1), side="right") - 1
    owner = np.minimum(owner, len(idx) - 2)
    rate = frozen[:, :, owner]
    integral = completed[:, :, owner] + rate * (elapsed - elapsed[idx[owner]])[None, None, :]
    return _assemble("rolling", ensemble, integral, rate, state_price, kappa, y,
                     subsistence, hedge)


def limit_policy(
    ensemble: Ensemble,
    state_price: np.ndarray,
    kappa: np.ndarray | float,
    y: Sequence[float] | np.ndarray,
    subsistence: Optional[np.ndarray] = None,
    hedge: Optional[np.ndarray] = None,
    impatience_integral: Optional[np.ndarray] = None,
) -> PolicyPath:
    """
    Vanishing-mesh limit of the rolling scheme: G_t = ∫₀^t γ(φ_u(x))du.

    G is the trapezoid rule on the simulation grid, so the rolling scheme on the
    full grid (left endpoints) differs from it by (Δt/2)(γ(φ_t) − γ(φ_0)).
    A market passes its own G through impatience_integral so that policy and η
    discount with the same integral.

    Raises:
        PolicyError: non-positive H or mismatched shapes
    """
    rate = ensemble.model.impatience(ensemble.states)
    if impatience_integral is None:
        integral = pathwise_integral(ensemble, rate)
    else:
        integral = np.asarray(impatience_integral, dtype=float)
        if integral.shape != rate.shape:
            raise PolicyError(f"impatience integral must have shape {rate.shape}")
    return _assemble("limit", ensemble, integral, rate, state_price, kappa, y,
                     subsistence, hedge)


def aggregate_policy(policy: PolicyPath, measure: PopulationMeasure) -> AggregatePolicy:
    """Σ_i w_i (·)(x_i) for wealth, net wealth, consumption, portfolio and L."""
    if measure.size != policy.net_wealth.shape[1]:
        raise PolicyError(f"measure has {measure.size} atoms, policy {policy.net_wealth.shape[1]}")

    def total(values: np.ndarray) -> np.ndarray:
        return np.einsum("k,mkj->mj", measure.weights, values)

    return AggregatePolicy(
        wealth=total(policy.wealth),
        net_wealth=total(policy.net_wealth),
        consumption=total(policy.consumption),
        portfolio=total(policy.portfolio),
        subsistence=total(policy.subsistence),
    )


def deflated_wealth_increments(policy: PolicyPath, measure: PopulationMeasure,
                               dt: float) -> np.ndarray:
    """
    Per-step increments of Σ_i w_i [H(ξ−L) + ∫H c du] (trapezoidal consumption integral).

    Returns:
        Array (M, N); zero drift under an equilibrium kernel
    """
    H = policy.state_price[:, None, :]
    deflated = H * policy.net_wealth
    spent = H * policy.consumption
    per_type = np.diff(deflated, axis=2) + 0.5 * dt * (spent[:, :, 1:] + spent[:, :, :-1])
    return np.einsum("k,mkj->mj", measure.weights, per_type)


def rolling_gap_study(
    ensemble: Ensemble,
    meshes: Sequence[float],
    state_price: np.ndarray,
    kappa: np.ndarray | float,
    y: Sequence[float] | np.ndarray,
) -> List[Tuple[float, float]]:
    """
    Mean over paths of sup_t |ξ^Γ_t − ξ^lim_t| for uniform partitions of each mesh.

    Returns:
        (mesh, gap) pairs ready for validation_oracle.convergence_order
    """
    limit = limit_policy(ensemble, state_price, kappa, y)
    valid = ensemble.valid
    pairs = []
    for mesh in meshes:
        rolled = rolling_policy(ensemble, Partition.uniform(ensemble.grid, mesh),
                                state_price, kappa, y)
        gap = np.max(np.abs(rolled.wealth - limit.wealth), axis=(1, 2))[valid]
        pairs.append((float(mesh), float(np.mean(gap))))
        logger.debug(f"rolling gap at mesh {mesh}: {pairs[-1][1]:.3e}")
    return pairs


def perturbed_utility_comparison(
    pref: IsoelasticPreference,
    grid: TimeGrid,
    y: float,
    factors: Sequence[float] = (0.9, 1.1),
    state_price: Optional[np.ndarray] = None,
) -> Dict[float, float]:
    """
    Expected utility of consuming k·γ of net wealth, for k = 1 and each factor.

    Utility is ∫U₁(t, c_t)dt + U₂(T, ξ_T − L_T) on the grid (trapezoid), averaged
    over the rows of state_price (a single deterministic H ≡ 1 by default). Every
    scaled strategy exhausts the same budget, so k = 1 should come out on top.

    Returns:
        Mapping factor -> expected utility, including 1.0
    """
    times = grid.elapsed
    H = np.ones((1, times.size)) if state_price is None else np.atleast_2d(state_price)
    deflator = H[:, :1] / H
    values = {}
    for k in (1.0, *factors):
        net = y * np.exp(-k * pref.gamma * times)[None, :] * deflator
        running = np.asarray(u1(pref, times[None, :] + grid.t0, k * pref.gamma * net))
        total = trapezoid(running, dx=grid.dt, axis=1) + np.asarray(u2(pref, grid.horizon, net[:, -1]))
        values[float(k)] = float(np.mean(total))
    return values
