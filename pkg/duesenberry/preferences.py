"""
Isoelastic consistent preference structures.

U₁(t, y) = c·e^{−βt}·y^α is the utility of consumption, U₂(t, y) = d·e^{−βt}·y^α the
utility of terminal wealth. With d = c((1−α)/β)^{1−α} the structure is time
consistent and the optimal consumption-to-net-wealth ratio is the effective
impatience γ = β/(1−α).
"""

import logging
import math
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate, optimize

from duesenberry.utils.errors import PreferenceError


# Configure logging
logger = logging.getLogger(__name__)


SIMPSON_PANELS = 256


class IsoelasticPreference(BaseModel):
    """Consistent isoelastic preference structure (c, α, β)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    scale: float = Field(default=1.0, gt=0.0, description="c")
    alpha: float = Field(gt=0.0, lt=1.0)
    beta: float = Field(ge=0.0, lt=1.0, description="β = 0 only for single-utility experiments")
    terminal_scale_override: Optional[float] = Field(
        default=None, gt=0.0, description="replaces the consistent d (inconsistency experiments)"
    )

    @model_validator(mode="after")
    def _finite(self) -> "IsoelasticPreference":
        if not all(math.isfinite(v) for v in (self.scale, self.alpha, self.beta)):
            raise ValueError("preference parameters must be finite")
        return self

    @property
    def consistent_terminal_scale(self) -> float:
        if self.beta == 0.0:
            raise PreferenceError("a consistent terminal utility needs beta > 0")
        return self.scale * ((1.0 - self.alpha) / self.beta) ** (1.0 - self.alpha)

    @property
    def terminal_scale(self) -> float:
        """d."""
        if self.terminal_scale_override is not None:
            return self.terminal_scale_override
        return self.consistent_terminal_scale

    @property
    def gamma(self) -> float:
        """Effective impatience β/(1−α)."""
        if self.beta == 0.0:
            raise PreferenceError("effective impatience needs beta > 0")
        return self.beta / (1.0 - self.alpha)

    def perturbed(self, factor: float) -> "IsoelasticPreference":
        """Same (c, α, β) with d multiplied by factor."""
        return self.model_copy(update={"terminal_scale_override": self.terminal_scale * factor})


def _positive(name: str, value: np.ndarray | float) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise PreferenceError(f"{name} must be positive and finite")
    return arr


def _utility(pref: IsoelasticPreference, scale: float, t: float,
             y: np.ndarray | float) -> np.ndarray | float:
    values = _positive("wealth/consumption y", y)
    out = scale * np.exp(-pref.beta * np.asarray(t, dtype=float)) * values ** pref.alpha
    return float(out) if np.ndim(out) == 0 else out


def u1(pref: IsoelasticPreference, t: float, y: np.ndarray | float) -> np.ndarray | float:
    """Utility of consumption c·e^{−βt}·y^α."""
    return _utility(pref, pref.scale, t, y)


def u2(pref: IsoelasticPreference, t: float, y: np.ndarray | float) -> np.ndarray | float:
    """Utility of terminal wealth d·e^{−βt}·y^α."""
    return _utility(pref, pref.terminal_scale, t, y)


def marginal_1(pref: IsoelasticPreference, t: float, y: np.ndarray | float) -> np.ndarray | float:
    values = _positive("y", y)
    out = pref.scale * pref.alpha * np.exp(-pref.beta * np.asarray(t, dtype=float)) \
        * values ** (pref.alpha - 1.0)
    return float(out) if np.ndim(out) == 0 else out


def _inverse(pref: IsoelasticPreference, scale: float, t: np.ndarray | float,
             z: np.ndarray | float) -> np.ndarray | float:
    marginal = _positive("marginal utility z", z)
    out = (marginal * np.exp(pref.beta * np.asarray(t, dtype=float)) / (scale * pref.alpha)) \
        ** (1.0 / (pref.alpha - 1.0))
    return float(out) if np.ndim(out) == 0 else out


def inverse_marginal_1(pref: IsoelasticPreference, t: np.ndarray | float,
                       z: np.ndarray | float) -> np.ndarray | float:
    """y solving ∂U₁/∂y(t, y) = z."""
    return _inverse(pref, pref.scale, t, z)


def inverse_marginal_2(pref: IsoelasticPreference, t: np.ndarray | float,
                       z: np.ndarray | float) -> np.ndarray | float:
    """y solving ∂U₂/∂y(t, y) = z."""
    return _inverse(pref, pref.terminal_scale, t, z)


def _simpson_inverse_1(pref: IsoelasticPreference, start: float, end: float, z: float) -> float:
    if end == start:
        return 0.0
    s = np.linspace(start, end, 2 * SIMPSON_PANELS + 1)
    return float(integrate.simpson(np.asarray(inverse_marginal_1(pref, s, z)), x=s))


def chi(pref: IsoelasticPreference, t: float, horizon: float, z: float) -> float:
    """
    𝒳(t, T, z) = 𝓘₂(T, z) + ∫_t^T 𝓘₁(s, z) ds by composite Simpson.

    Raises:
        PreferenceError: t > T or z ≤ 0
    """
    if t > horizon:
        raise PreferenceError(f"chi needs t <= T, got t={t}, T={horizon}")
    terminal = float(inverse_marginal_2(pref, horizon, z))
    return terminal + _simpson_inverse_1(pref, t, horizon, z)


def chi_closed_form(pref: IsoelasticPreference, t: float, z: float) -> float:
    """Horizon-free 𝒳 of a consistent structure: (z/(cα))^{1/(α−1)}·e^{−γt}/γ."""
    _positive("marginal utility z", z)
    base = (z / (pref.scale * pref.alpha)) ** (1.0 / (pref.alpha - 1.0))
    return base * math.exp(-pref.gamma * t) / pref.gamma


def time_consistency_residual(pref: IsoelasticPreference, early: float, late: float,
                              z: float) -> float:
    """|𝓘₂(T′,z) − 𝓘₂(T,z) − ∫_{T′}^T 𝓘₁(s,z) ds| for T′ ≤ T."""
    if early > late:
        raise PreferenceError(f"need T' <= T, got {early} > {late}")
    lhs = float(inverse_marginal_2(pref, early, z)) - float(inverse_marginal_2(pref, late, z))
    return abs(lhs - _simpson_inverse_1(pref, early, late, z))


def check_duality(
    pref: IsoelasticPreference,
    t: float,
    z: float,
    search_grid: Optional[Sequence[float]] = None,
    terminal: bool = False,
) -> float:
    """
    Residual of sup_x (U(t,x) − xz) = U(t,𝓘(t,z)) − z𝓘(t,z).

    The supremum is searched on a log-spaced grid around 𝓘(t, z) (or on the
    supplied search_grid) and refined by bounded scalar minimization between
    the neighbours of the best grid point.

    Args:
        pref: Preference structure
        t: Time
        z: Marginal utility level, z > 0
        search_grid: Optional candidate wealth levels
        terminal: Use U₂/𝓘₂ instead of U₁/𝓘₁
    """
    _positive("marginal utility z", z)
    scale = pref.terminal_scale if terminal else pref.scale
    optimum = float(_inverse(pref, scale, t, z))
    discount = math.exp(-pref.beta * t)

    def objective(x: np.ndarray | float) -> np.ndarray | float:
        return scale * discount * np.asarray(x, dtype=float) ** pref.alpha - np.asarray(x) * z

    if search_grid is None:
        grid = optimum * np.logspace(-6.0, 6.0, 2401)
    else:
        grid = np.sort(_positive("search grid", np.asarray(search_grid, dtype=float)))
    values = np.asarray(objective(grid))
    best = int(np.argmax(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid.size - 1)]
    sup = float(values[best])
    if hi > lo:
        refined = optimize.minimize_scalar(
            lambda x: -float(objective(x)), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-12 * max(hi, 1.0)},
        )
        sup = max(sup, -float(refined.fun))
    analytic = float(objective(optimum))
    return abs(sup - analytic)


def consumption_fraction(pref: IsoelasticPreference) -> float:
    """Optimal consumption per unit of net wealth; depends on (α, β) only through γ."""
    return pref.gamma
