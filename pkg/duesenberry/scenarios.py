"""
Closed-form scenario catalogue.

Every scenario shares one setup (an OU-type flow on the type line, a finite
population, a log-linear income field and a sigmoid impatience field) and
differs in its endowment field:

- rentier: no labor income
- example51: Q from a decaying share field B_t(x) = B₀(x)e^{−λ(x)t}
- example53: Q from a decaying value field χ_t(x), given directly or built
  from a floor f(x) and an endowment share u_t(x)
- tabulated: Q_t(x) = q(φ_t(x))·I_t(x) with q interpolated from a table and
  valued by nested Monte Carlo

Example usage:
    from duesenberry.scenarios import build_scenario, desk_spec

    spec = desk_spec("example51")
    inputs = build_scenario(spec)
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, ClassVar, Dict, Literal, Optional, Sequence, Tuple

import numpy as np

from duesenberry.equilibrium import (
    EndowmentValues,
    EquilibriumInputs,
    MarketContext,
    MarketPath,
    NestedSettings,
    TypeField,
    ZeroEndowment,
    nested_endowment_values,
)
from duesenberry.flow_engine import FlowModel, pathwise_integral
from duesenberry.population import PopulationMeasure
from duesenberry.utils.errors import ScenarioError


logger = logging.getLogger(__name__)


ScenarioKind = Literal["rentier", "example51", "example53", "tabulated"]

CONSTRAINT_SLACK = 1e-12
DEGENERATE_THETA = 1e-12


# ==============================================================================
# Endowment fields
# ==============================================================================

def _per_type(values: Optional[Sequence[float] | np.ndarray], size: int, name: str,
              default: float = 0.0) -> np.ndarray:
    if values is None:
        return np.full(size, default)
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.size == 1:
        arr = np.full(size, float(arr[0]))
    if arr.shape != (size,) or np.any(~np.isfinite(arr)):
        raise ScenarioError(f"{name} needs {size} finite entries, got {arr.shape}")
    return arr


def _closed_form_base(context: MarketContext) -> np.ndarray:
    """I^μ·η/loading, the rentier price and the common factor of the closed forms."""
    return context.income * context.eta / context.loading


@dataclass(frozen=True)
class DecayingShareEndowment:
    """
    Labor income whose value is a decaying share of initial net wealth.

        L_t(x) = −(η_t I^μ_t / loading_t)·B_t(x)·y(x)/∫y dμ
        Q_t(x) = y(x) I^μ_t B_t(x) (loading_t + λ(x)η_t) / (loading_t ∫y dμ)
    """
    initial_share: Tuple[float, ...]
    decay: Tuple[float, ...]
    kind: str = "example51"
    price_proportional: ClassVar[bool] = True

    def evaluate(self, context: MarketContext) -> EndowmentValues:
        w = context.measure.weights
        y = context.y
        b0 = np.asarray(self.initial_share)
        lam = np.asarray(self.decay)
        total_y = float(np.sum(w * y))
        B = b0[:, None] * np.exp(-lam[:, None] * context.elapsed[None, :])
        owned = (y / total_y)[None, :, None]
        base = _closed_form_base(context)
        patience = (context.eta / context.loading)[:, None, :]

        L = -base[:, None, :] * B[None] * owned
        Q = owned * context.income[:, None, :] * B[None] * (1.0 + lam[None, :, None] * patience)
        mean_share = np.einsum("k,kj->j", w * y, B) / total_y
        H = context.state_price
        return EndowmentValues(
            type_endowment=Q,
            type_subsistence=L,
            price=base * (1.0 - mean_share)[None, :],
            references={
                "labor_value": y * b0,
                "deflated_subsistence": -(context.eta[:, None, :] * B[None] * owned),
                "mean_share": mean_share,
                "deflated_subsistence_simulated": H[:, None, :] * L,
            },
        )


@dataclass(frozen=True)
class ExplicitLaborEndowment:
    """
    Labor income from a decaying value field χ_t(x) = (s(x)/η₀)·e^{−λ(x)t}.

        u_t(x) = χ_t(x)(1 + λ(x)η_t/loading_t),  ∫y u_t dμ < 1
        Q_t(x) = y(x) I^μ_t u_t(x),  L_t(x) = −(η_t/loading_t) I^μ_t y(x) χ_t(x)
    """
    initial_share: Tuple[float, ...]
    decay: Tuple[float, ...]
    kind: str = "example53"
    price_proportional: ClassVar[bool] = True

    def evaluate(self, context: MarketContext) -> EndowmentValues:
        w = context.measure.weights
        y = context.y
        lam = np.asarray(self.decay)
        eta0 = float(np.sum(w * y))
        chi = (np.asarray(self.initial_share) / eta0)[:, None] \
            * np.exp(-lam[:, None] * context.elapsed[None, :])
        patience = (context.eta / context.loading)[:, None, :]
        u = chi[None] * (1.0 + lam[None, :, None] * patience)
        _check_share_budget(np.einsum("k,mkj->mj", w * y, u), context)

        base = _closed_form_base(context)
        held = np.einsum("k,kj->j", w * y, chi)
        return EndowmentValues(
            type_endowment=y[None, :, None] * context.income[:, None, :] * u,
            type_subsistence=-patience * context.income[:, None, :] * y[None, :, None] * chi[None],
            price=base * (1.0 - held)[None, :],
            references={
                "labor_value": eta0 * y * chi[:, 0],
                "chi": chi,
                "u": u,
            },
        )


@dataclass(frozen=True)
class LaborFlowEndowment:
    """
    Labor income from a floor f(x) and an endowment share u_t(x) = u₀(x)e^{ν(x)t}.

    χ follows from χ_tη_t = η₀f(x) − ∫₀^t loading_s u_s(x) ds (trapezoid on the
    grid), and the chain η_t u_t + ∫loading·u ≥ η₀f ≥ ∫loading·u, equivalently
    χ ≥ 0 and ∂χ ≤ 0, must hold on every sampled path.
    """
    floor_share: Tuple[float, ...]
    flow_share: Tuple[float, ...]
    flow_growth: Tuple[float, ...]
    kind: str = "example53"
    price_proportional: ClassVar[bool] = False

    def evaluate(self, context: MarketContext) -> EndowmentValues:
        w = context.measure.weights
        y = context.y
        valid = context.ensemble.valid
        eta0 = float(np.sum(w * y))
        f = np.asarray(self.floor_share) / eta0
        u = (np.asarray(self.flow_share) / eta0)[:, None] \
            * np.exp(np.asarray(self.flow_growth)[:, None] * context.elapsed[None, :])
        u = np.broadcast_to(u[None], context.type_income.shape)
        _check_share_budget(np.einsum("k,mkj->mj", w * y, u), context)

        loading = context.loading[:, None, :]
        eta = context.eta[:, None, :]
        spent = pathwise_integral(context.ensemble, loading * u)
        remaining = eta0 * f[None, :, None] - spent
        chi = remaining / eta
        chi_rate = (loading / eta) * (chi - u)

        if np.any(chi[valid] < -CONSTRAINT_SLACK):
            raise ScenarioError("chi turned negative: η₀f < ∫loading·u on a sampled path")
        if np.any(chi_rate[valid] > CONSTRAINT_SLACK):
            raise ScenarioError("chi increases: η·u + ∫loading·u < η₀f on a sampled path")
        recovered = chi - (eta / loading) * chi_rate

        base = _closed_form_base(context)
        held = np.einsum("k,mkj->mj", w * y, chi)
        return EndowmentValues(
            type_endowment=y[None, :, None] * context.income[:, None, :] * u,
            type_subsistence=-(context.income / context.loading)[:, None, :]
            * y[None, :, None] * remaining,
            price=base * (1.0 - held),
            references={
                "labor_value": eta0 * y * f,
                "chi": chi,
                "u": np.array(u),
                "u_recovery_error": np.array(float(np.max(
                    np.abs(recovered - u)[valid], initial=0.0))),
            },
        )


def _check_share_budget(held: np.ndarray, context: MarketContext) -> None:
    if np.any(held[context.ensemble.valid] >= 1.0):
        raise ScenarioError("endowment shares reach the whole of aggregate income (∫y·u ≥ 1)")


@dataclass(frozen=True)
class TabulatedEndowment:
    """Q_t(x) = q(φ_t(x))·I_t(x) with q linearly interpolated on a one-dimensional table."""
    knots: Tuple[float, ...]
    shares: Tuple[float, ...]
    settings: NestedSettings = field(default_factory=NestedSettings)
    kind: str = "tabulated"
    price_proportional: ClassVar[bool] = False

    def share(self, states: np.ndarray) -> np.ndarray:
        return np.interp(states[..., 0], self.knots, self.shares)

    def evaluate(self, context: MarketContext) -> EndowmentValues:
        if context.ensemble.model.dimension != 1:
            raise ScenarioError("tabulated endowments need a one-dimensional type space")
        return nested_endowment_values(context, self.share, self.settings)


# ==============================================================================
# Scenario specs and builders
# ==============================================================================

@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """Primitives plus the parameters of one endowment family."""
    kind: ScenarioKind
    model: FlowModel
    measure: PopulationMeasure
    income: TypeField
    y: np.ndarray
    income_gradient: Optional[TypeField] = None
    initial_share: Optional[np.ndarray] = None
    decay: Optional[np.ndarray] = None
    floor_share: Optional[np.ndarray] = None
    flow_share: Optional[np.ndarray] = None
    flow_growth: Optional[np.ndarray] = None
    table: Optional[Tuple[Sequence[float], Sequence[float]]] = None
    nested: Optional[NestedSettings] = None
    notes: Dict[str, Any] = field(default_factory=dict)


def _inputs(spec: ScenarioSpec, endowment: Any) -> EquilibriumInputs:
    return EquilibriumInputs.normalized(spec.model, spec.measure, spec.income, spec.y,
                                        endowment, spec.income_gradient)


def build_rentier(spec: ScenarioSpec) -> EquilibriumInputs:
    return _inputs(spec, ZeroEndowment())


def build_example51(spec: ScenarioSpec) -> EquilibriumInputs:
    """
    Decaying-share labor income.

    Raises:
        ScenarioError: negative shares or decay rates, or ∫B₀y dμ ≥ ∫y dμ
    """
    size = spec.measure.size
    b0 = _per_type(spec.initial_share, size, "initial_share")
    lam = _per_type(spec.decay, size, "decay")
    if np.any(b0 < 0) or np.any(lam < 0):
        raise ScenarioError("B₀ and its decay rate must be non-negative")
    inputs = _inputs(spec, DecayingShareEndowment(tuple(b0), tuple(lam)))
    w = spec.measure.weights
    if float(np.sum(w * b0 * inputs.y)) >= float(np.sum(w * inputs.y)):
        raise ScenarioError("∫B₀·y dμ must stay below ∫y dμ")
    return inputs


def build_example53(spec: ScenarioSpec) -> EquilibriumInputs:
    """
    Decaying-value labor income, direct χ form or (f, u) form.

    The (f, u) form is used when floor_share is given; path-dependent
    constraints are checked when the market is built.

    Raises:
        ScenarioError: negative parameters or an initial share budget ≥ 1
    """
    size = spec.measure.size
    if spec.floor_share is not None:
        f = _per_type(spec.floor_share, size, "floor_share")
        u0 = _per_type(spec.flow_share, size, "flow_share")
        nu = _per_type(spec.flow_growth, size, "flow_growth")
        if np.any(f < 0) or np.any(u0 < 0) or np.any(nu < 0):
            raise ScenarioError("floor, endowment share and its growth must be non-negative")
        if np.any(u0 < f):
            logger.warning("u₀ < f for some type; χ will increase at the start")
        inputs = _inputs(spec, LaborFlowEndowment(tuple(f), tuple(u0), tuple(nu)))
        shares = u0
    else:
        shares = _per_type(spec.initial_share, size, "initial_share")
        lam = _per_type(spec.decay, size, "decay")
        if np.any(shares < 0) or np.any(lam < 0):
            raise ScenarioError("χ₀ and its decay rate must be non-negative")
        inputs = _inputs(spec, ExplicitLaborEndowment(tuple(shares), tuple(lam)))
    w = spec.measure.weights
    if float(np.sum(w * inputs.y * shares)) >= float(np.sum(w * inputs.y)):
        raise ScenarioError("initial endowment shares must average below one")
    return inputs


def build_tabulated(spec: ScenarioSpec) -> EquilibriumInputs:
    """
    Raises:
        ScenarioError: missing table, unsorted knots, or shares outside [0, 1)
    """
    if spec.table is None:
        raise ScenarioError("tabulated scenario needs a (knots, shares) table")
    knots, shares = (np.asarray(v, dtype=float) for v in spec.table)
    if knots.shape != shares.shape or knots.size < 2 or np.any(np.diff(knots) <= 0):
        raise ScenarioError("table knots must increase strictly and match the shares")
    if np.any(shares < 0) or np.any(shares >= 1):
        raise ScenarioError("tabulated endowment shares must lie in [0, 1)")
    settings = spec.nested if spec.nested is not None else NestedSettings()
    return _inputs(spec, TabulatedEndowment(tuple(knots), tuple(shares), settings))


BUILDERS = {
    "rentier": build_rentier,
    "example51": build_example51,
    "example53": build_example53,
    "tabulated": build_tabulated,
}


def build_scenario(spec: ScenarioSpec) -> EquilibriumInputs:
    try:
        builder = BUILDERS[spec.kind]
    except KeyError:
        raise ScenarioError(f"unknown scenario kind '{spec.kind}'") from None
    return builder(spec)


# ==============================================================================
# Desk defaults
# ==============================================================================

def desk_flow_model(
    mean_reversion: float = 1.0,
    volatility: Tuple[float, float] = (0.3, 0.2),
    gamma_range: Tuple[float, float] = (0.01, 0.08),
    gamma_slope: float = 1.5,
    gamma_center: float = 0.0,
    growth_rate: float = 0.0,
) -> FlowModel:
    """
    d = 1, n = 2 OU-type flow whose noise direction turns with the type:
    ϱ(x) = (s₁, s₂·tanh x), and γ(x) a sigmoid between the bounds of gamma_range.
    """
    lo, hi = gamma_range
    if not 0 < lo < hi:
        raise ScenarioError(f"impatience range must satisfy 0 < low < high, got {gamma_range}")
    s1, s2 = volatility
    if s1 <= 0:
        raise ScenarioError("the first volatility component must be positive")

    def drift(x: np.ndarray) -> np.ndarray:
        return -mean_reversion * x

    def diffusion(x: np.ndarray) -> np.ndarray:
        return np.stack([np.full(x.shape, s1), s2 * np.tanh(x)], axis=-1)

    def sigmoid(x: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-gamma_slope * (x[..., 0] - gamma_center)))

    def impatience(x: np.ndarray) -> np.ndarray:
        return lo + (hi - lo) * sigmoid(x)

    def impatience_gradient(x: np.ndarray) -> np.ndarray:
        s = sigmoid(x)
        return ((hi - lo) * gamma_slope * s * (1.0 - s))[..., None]

    def growth(x: np.ndarray) -> np.ndarray:
        return np.full(x.shape[:-1], growth_rate)

    return FlowModel(
        dimension=1,
        noise_dimension=2,
        drift=drift,
        diffusion=diffusion,
        impatience=impatience,
        growth=growth,
        impatience_gradient=impatience_gradient,
        impatience_bounds=(lo, hi),
        growth_bounds=(min(growth_rate, 0.0), max(growth_rate, 0.0)),
    )


def log_linear_income(level: float = 0.0, slope: float = 0.5) -> Tuple[TypeField, TypeField]:
    """I(x) = exp(level + slope·x) and its gradient."""
    def income(x: np.ndarray) -> np.ndarray:
        return np.exp(level + slope * x[..., 0])

    def gradient(x: np.ndarray) -> np.ndarray:
        return (slope * np.exp(level + slope * x[..., 0]))[..., None]

    return income, gradient


def desk_population(atoms: int = 5, spread: float = 1.0) -> PopulationMeasure:
    points = np.linspace(-spread, spread, atoms)[:, None]
    return PopulationMeasure.discrete(points, np.full(atoms, 1.0 / atoms))


def desk_spec(kind: ScenarioKind = "example51", atoms: int = 5, **overrides: Any) -> ScenarioSpec:
    """Default desk scenario: 5 atoms on [−1, 1], y rising with the type, per-kind shares."""
    measure = overrides.pop("measure", desk_population(atoms))
    model = overrides.pop("model", desk_flow_model())
    income, gradient = log_linear_income()
    x = measure.points[:, 0]
    defaults: Dict[str, Any] = {
        "income": income,
        "income_gradient": gradient,
        "y": 50.0 * np.exp(0.2 * x),
    }
    if kind == "example51":
        defaults.update(initial_share=np.linspace(0.2, 0.5, measure.size),
                        decay=np.full(measure.size, 0.01))
    elif kind == "example53":
        defaults.update(initial_share=np.linspace(0.1, 0.3, measure.size),
                        decay=np.full(measure.size, 0.02))
    elif kind == "tabulated":
        defaults.update(table=((-3.0, 0.0, 3.0), (0.1, 0.3, 0.5)))
    defaults.update(overrides)
    return ScenarioSpec(kind=kind, model=model, measure=measure, **defaults)


# ==============================================================================
# Diagnostics
# ==============================================================================

@dataclass
class LaborValueReport:
    martingale_residual: float
    total_value_error: float
    reference_error: Optional[float]
    tolerance: float

    @property
    def passed(self) -> bool:
        worst = max(self.martingale_residual, self.total_value_error,
                    self.reference_error or 0.0)
        return worst <= self.tolerance

    def summary(self) -> Dict[str, Any]:
        return {
            "martingale_residual": self.martingale_residual,
            "total_value_error": self.total_value_error,
            "reference_error": self.reference_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def labor_value_check(market: MarketPath, tolerance: Optional[float] = None) -> LaborValueReport:
    """
    H_tL_t(x) − ∫₀^t H_sQ_s(x)ds must stay at its initial value on every path.

    The time integral is the trapezoid rule on the simulation grid, so the
    residual is a discretization error of order Δt (the default tolerance).
    The total value ∫₀^∞HQ closes the grid integral with the exact tail −H_TL_T
    and is compared with −H₀L₀ and with the scenario's closed-form labor value.
    """
    valid = market.valid
    dt = market.dt
    tol = dt if tolerance is None else tolerance
    H = market.state_price[:, None, :]
    deflated_value = H * market.type_subsistence
    deflated_flow = H * market.type_endowment
    accumulated = pathwise_integral(market.ensemble, deflated_flow)

    scale = float(np.max(np.abs(deflated_value[valid][:, :, 0]), initial=0.0))
    if scale == 0.0:
        return LaborValueReport(0.0, 0.0, None, tol)
    drift = deflated_value - deflated_value[:, :, :1] - accumulated
    martingale_residual = float(np.max(np.abs(drift[valid]))) / scale

    total = accumulated[:, :, -1] - deflated_value[:, :, -1]
    expected = -deflated_value[:, :, 0]
    total_error = float(np.max(np.abs((total - expected)[valid]))) / scale
    reference_error = None
    if "labor_value" in market.references:
        ref = np.asarray(market.references["labor_value"])
        reference_error = float(np.max(np.abs(expected[valid] - ref[None, :]))) / scale
    return LaborValueReport(martingale_residual, total_error, reference_error, tol)


@dataclass
class SmoothMarketReport:
    income_loading: np.ndarray
    impatience_loading: np.ndarray
    min_theta_norm: float
    degenerate_steps: np.ndarray
    u: np.ndarray
    v: np.ndarray
    orthogonality_residual: float
    separation: float
    feasible: bool
    candidate_feasible: Optional[bool] = None

    @property
    def degenerate(self) -> bool:
        return bool(np.any(self.degenerate_steps))

    def summary(self) -> Dict[str, Any]:
        return {
            "min_theta_norm": self.min_theta_norm,
            "degenerate_steps": int(np.sum(self.degenerate_steps)),
            "u": self.u.tolist(),
            "v": self.v.tolist(),
            "orthogonality_residual": self.orthogonality_residual,
            "separation": self.separation,
            "feasible": self.feasible,
            "candidate_feasible": self.candidate_feasible,
        }


def _null_directions(samples: np.ndarray, tolerance: float) -> np.ndarray:
    """Orthonormal basis (columns) of directions annihilating every sample row."""
    scale = float(np.max(np.linalg.norm(samples, axis=1), initial=0.0))
    n = samples.shape[1]
    if scale <= tolerance:
        return np.eye(n)
    _, singular, vt = np.linalg.svd(samples / scale, full_matrices=True)
    singular = np.concatenate([singular, np.zeros(n - singular.size)])
    return vt[singular <= tolerance].T


def _separation(u: np.ndarray, v: np.ndarray, income: np.ndarray, impatience: np.ndarray) -> float:
    return float(np.min(np.abs(income @ u + impatience @ v), initial=math.inf))


def smooth_market_diagnostic(
    market: MarketPath,
    candidate: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
    tolerance: float = 1e-8,
) -> SmoothMarketReport:
    """
    Σ^I and Σ^γ along the ensemble, the minimum |ϑ|, and a search for fixed
    u, v ≠ 0 with uᵀΣ^γ = 0, vᵀΣ^I = 0 and uᵀΣ^I + vᵀΣ^γ ≠ 0 on every sample.

    Raises:
        ScenarioError: fewer than two noise dimensions or missing gradients
    """
    inputs = market.inputs
    ensemble = market.ensemble
    model = ensemble.model
    if model.noise_dimension < 2:
        raise ScenarioError("the smooth market diagnostic needs n >= 2")
    if inputs.income_gradient is None or model.impatience_gradient is None:
        raise ScenarioError("the smooth market diagnostic needs ∇I and ∇γ")

    valid = market.valid
    states = ensemble.states
    sigma = model.diffusion(states)
    w = inputs.measure.weights
    lam = np.exp(ensemble.log_weights)
    discount = np.exp(-market.impatience_integral)
    income_loading = np.einsum(
        "k,mkj,mkjd,mkjdn->mjn", w, lam, inputs.income_gradient(states), sigma)
    impatience_loading = np.einsum(
        "k,mkj,mkjd,mkjdn->mjn", w * inputs.y, discount, model.impatience_gradient(states), sigma)
    theta = income_loading / market.income[..., None] \
        - impatience_loading / market.loading[..., None]
    theta_norm = np.linalg.norm(theta[valid], axis=-1)
    degenerate = np.any(theta_norm < DEGENERATE_THETA, axis=0)

    income_samples = income_loading[valid].reshape(-1, model.noise_dimension)
    impatience_samples = impatience_loading[valid].reshape(-1, model.noise_dimension)
    u_basis = _null_directions(impatience_samples, tolerance)
    v_basis = _null_directions(income_samples, tolerance)
    best = (np.zeros(model.noise_dimension), np.zeros(model.noise_dimension), 0.0)
    for i in range(u_basis.shape[1]):
        for j in range(v_basis.shape[1]):
            for sign in (1.0, -1.0):
                u, v = u_basis[:, i], sign * v_basis[:, j]
                gap = _separation(u, v, income_samples, impatience_samples)
                if gap > best[2]:
                    best = (u, v, gap)
    u, v, gap = best
    ortho = max(
        float(np.max(np.abs(impatience_samples @ u), initial=0.0)),
        float(np.max(np.abs(income_samples @ v), initial=0.0)),
    )
    scale = max(float(np.max(np.abs(income_samples), initial=0.0)), 1e-300)
    feasible = u.any() and v.any() and gap > tolerance * scale

    candidate_feasible = None
    if candidate is not None:
        cu, cv = (np.asarray(c, dtype=float) for c in candidate)
        candidate_feasible = bool(
            np.max(np.abs(impatience_samples @ cu), initial=0.0) <= tolerance * scale
            and np.max(np.abs(income_samples @ cv), initial=0.0) <= tolerance * scale
            and _separation(cu, cv, income_samples, impatience_samples) > tolerance * scale
        )

    report = SmoothMarketReport(
        income_loading=income_loading,
        impatience_loading=impatience_loading,
        min_theta_norm=float(np.min(theta_norm, initial=math.inf)),
        degenerate_steps=degenerate,
        u=u,
        v=v,
        orthogonality_residual=ortho,
        separation=gap,
        feasible=bool(feasible),
        candidate_feasible=candidate_feasible,
    )
    if report.degenerate:
        logger.warning(f"market price of risk degenerate at {int(degenerate.sum())} steps")
    return report
