"""
Equity-premium and short-rate decompositions, and the Table-1 calibration.

With aggregate consumption c and the Duesenberry loading −∂η written as

    dc/c          = μ^c dt + (σ^c)ᵀ dW
    d(−∂η)/(−∂η)  = μ^{−∂η} dt + (σ^{−∂η})ᵀ dW

the excess return of any traded asset with volatility σ^Σ splits into

    b + δ − r = (σ^c)ᵀσ^Σ − (σ^{−∂η})ᵀσ^Σ = (σ^W)ᵀσ^Σ

(consumption term minus impatience term), and the short rate into

    r = (μ^c − μ^{−∂η}) − (σ^c)ᵀϑ.

All rates are fractions per year; percentages exist only in formatted output.

Example usage:
    from duesenberry.decomp_calibration import load_table1, table1_comparison

    comparison = table1_comparison(load_table1())
    assert comparison["ep_within_tolerance"].all()
"""

import logging
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from duesenberry.equilibrium import MarketPath
from duesenberry.utils.errors import CalibrationError, DataFileError
from duesenberry.validation_oracle import (
    DEFAULT_PASS_FRACTION,
    DEFAULT_SIGMAS,
    StatTestReport,
    band_test,
)


# Configure logging
logger = logging.getLogger(__name__)


TABLE1_COLUMNS = ("source", "period", "sigma", "ep", "printed_predicted_ep", "printed_theta")
EP_TOLERANCE = 0.001        # 0.1 percentage point
THETA_TOLERANCE = 0.01

# Post-war U.S. inputs for the short-rate calculations (fractions per year)
NOMINAL_CONSUMPTION_DRIFT = 0.0555
REAL_CONSUMPTION_DRIFT = 0.02
IMPATIENCE = 0.012
CONSUMPTION_VOLATILITY = 0.0124
NOMINAL_CONSUMPTION_RISK_PREMIUM = 0.0238
REAL_CONSUMPTION_RISK_PREMIUM = 0.022
OBSERVED_NOMINAL_RATE = 0.0473

Vector = Union[float, Sequence[float], np.ndarray]


class ObservableInputs(BaseModel):
    """Market observables for a one-factor reading of the decompositions."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    equity_volatility: float = Field(gt=0)
    equity_premium: float
    consumption_drift: float = 0.0
    consumption_volatility: float = Field(default=0.0, ge=0)
    impatience: float = Field(default=IMPATIENCE, gt=0)
    consumption_risk_premium: float = 0.0
    loading_drift: Optional[float] = None

    @model_validator(mode="after")
    def _finite(self) -> "ObservableInputs":
        values = [v for v in self.model_dump().values() if v is not None]
        if not all(math.isfinite(v) for v in values):
            raise ValueError("observable inputs must be finite")
        return self

    @property
    def effective_loading_drift(self) -> float:
        """μ^{−∂η}; −γ at leading order when not supplied."""
        return -self.impatience if self.loading_drift is None else self.loading_drift


@dataclass(frozen=True)
class PremiumDecomposition:
    consumption: float
    impatience: float

    @property
    def total(self) -> float:
        return self.consumption - self.impatience

    @property
    def amplifies(self) -> bool:
        """Impatience term raises the total premium."""
        return self.impatience < 0


@dataclass(frozen=True)
class Table1Row:
    predicted_ep: float
    implied_theta: float

    @property
    def exceeds_proxy(self) -> bool:
        return self.implied_theta ** 2 > self.predicted_ep


@dataclass(frozen=True)
class DecompositionReport:
    """Decomposition of one set of observables."""
    consumption_premium: float
    impatience_premium: float
    total_premium: float
    predicted_ep: float
    implied_theta: float
    short_rate_constant: float
    short_rate_heterogeneous: float

    def summary(self) -> Dict[str, Any]:
        return {
            "consumption_premium": self.consumption_premium,
            "impatience_premium": self.impatience_premium,
            "total_premium": self.total_premium,
            "predicted_ep": self.predicted_ep,
            "implied_theta": self.implied_theta,
            "short_rate_constant": self.short_rate_constant,
            "short_rate_heterogeneous": self.short_rate_heterogeneous,
        }


def _vector(value: Vector, name: str) -> np.ndarray:
    array = np.atleast_1d(np.asarray(value, dtype=float))
    if array.ndim != 1:
        raise CalibrationError(f"{name} must be a vector, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise CalibrationError(f"{name} has non-finite entries")
    return array


def _inner(left: Vector, right: Vector, names: Tuple[str, str]) -> float:
    a, b = _vector(left, names[0]), _vector(right, names[1])
    if a.shape != b.shape:
        raise CalibrationError(
            f"noise dimension mismatch: {names[0]} has {a.size}, {names[1]} has {b.size}"
        )
    return float(a @ b)


def equity_premium(sigma_w: Vector, sigma_equity: Vector) -> float:
    """
    Excess return (σ^W)ᵀσ^Σ of an asset with volatility σ^Σ.

    Raises:
        CalibrationError: vectors of different noise dimension
    """
    return _inner(sigma_w, sigma_equity, ("sigma_w", "sigma_equity"))


def decomposed_premium(sigma_c: Vector, sigma_loading: Vector,
                       sigma_equity: Vector) -> PremiumDecomposition:
    """
    Consumption and impatience terms of the excess return.

    Args:
        sigma_c: Consumption volatility σ^c
        sigma_loading: Volatility σ^{−∂η} of the Duesenberry loading
        sigma_equity: Asset volatility σ^Σ

    Raises:
        CalibrationError: vectors of different noise dimension
    """
    return PremiumDecomposition(
        consumption=_inner(sigma_c, sigma_equity, ("sigma_c", "sigma_equity")),
        impatience=_inner(sigma_loading, sigma_equity, ("sigma_loading", "sigma_equity")),
    )


def impatience_amplifies(sigma_loading: Vector, sigma_equity: Vector) -> bool:
    """True exactly when (σ^{−∂η})ᵀσ^Σ < 0."""
    return _inner(sigma_loading, sigma_equity, ("sigma_loading", "sigma_equity")) < 0


def table1_row(sigma: float, ep: float) -> Table1Row:
    """
    Proxy premium (σ^Σ)² and implied price of risk EP/σ^Σ.

    Raises:
        CalibrationError: non-positive equity volatility
    """
    if not sigma > 0:
        raise CalibrationError(f"equity volatility must be positive, got {sigma}")
    return Table1Row(predicted_ep=sigma * sigma, implied_theta=ep / sigma)


def short_rate(consumption_drift: float, loading_drift: float,
               consumption_risk_premium: float) -> float:
    """r = (μ^c − μ^{−∂η}) − (σ^c)ᵀϑ."""
    return (consumption_drift - loading_drift) - consumption_risk_premium


def short_rate_constant(consumption_drift: float, impatience: float,
                        consumption_volatility: Vector) -> float:
    """Constant-impatience rate μ^c + γ − |σ^c|²."""
    sigma_c = _vector(consumption_volatility, "consumption_volatility")
    return consumption_drift + impatience - float(sigma_c @ sigma_c)


def decompose_observables(inputs: ObservableInputs) -> DecompositionReport:
    """
    One-factor decomposition of observed moments.

    With a single noise the consumption term is |σ^c|·σ^Σ and the impatience
    term is what the observed premium leaves over it.
    """
    row = table1_row(inputs.equity_volatility, inputs.equity_premium)
    consumption = inputs.consumption_volatility * inputs.equity_volatility
    return DecompositionReport(
        consumption_premium=consumption,
        impatience_premium=consumption - inputs.equity_premium,
        total_premium=inputs.equity_premium,
        predicted_ep=row.predicted_ep,
        implied_theta=row.implied_theta,
        short_rate_constant=short_rate_constant(
            inputs.consumption_drift, inputs.impatience, inputs.consumption_volatility
        ),
        short_rate_heterogeneous=short_rate(
            inputs.consumption_drift, inputs.effective_loading_drift,
            inputs.consumption_risk_premium,
        ),
    )


def load_table1(path: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """
    Read the Table-1 observations (bundled file unless a path is given).

    Raises:
        DataFileError: file missing, unreadable, or with missing/invalid columns
    """
    try:
        if path is None:
            source = resources.files("duesenberry").joinpath("data", "table1.csv")
            with source.open("r", encoding="utf-8") as handle:
                frame = pd.read_csv(handle, comment="#")
        else:
            frame = pd.read_csv(path, comment="#")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataFileError(f"cannot read Table-1 data: {e}") from e

    missing = [c for c in TABLE1_COLUMNS if c not in frame.columns]
    if missing:
        raise DataFileError(f"Table-1 data lacks columns {missing}")
    numeric = frame[list(TABLE1_COLUMNS[2:])].apply(pd.to_numeric, errors="coerce")
    if numeric.isna().any().any():
        raise DataFileError("Table-1 data has non-numeric or empty values")
    if (numeric["sigma"] <= 0).any():
        raise DataFileError("Table-1 data has a non-positive equity volatility")
    frame[list(TABLE1_COLUMNS[2:])] = numeric
    logger.debug(f"loaded {len(frame)} Table-1 rows")
    return frame


def table1_comparison(frame: pd.DataFrame) -> pd.DataFrame:
    """Recompute the derived Table-1 columns and diff them against the printed ones."""
    rows = [table1_row(s, e) for s, e in zip(frame["sigma"], frame["ep"])]
    out = frame.loc[:, list(TABLE1_COLUMNS)].copy()
    out["predicted_ep"] = [r.predicted_ep for r in rows]
    out["implied_theta"] = [r.implied_theta for r in rows]
    out["ep_diff"] = out["predicted_ep"] - out["printed_predicted_ep"]
    out["theta_diff"] = out["implied_theta"] - out["printed_theta"]
    out["ep_within_tolerance"] = out["ep_diff"].abs() <= EP_TOLERANCE
    out["theta_within_tolerance"] = out["theta_diff"].abs() <= THETA_TOLERANCE
    out["ep_exceeds_proxy"] = out["ep"] > out["predicted_ep"]
    failing = int((~(out["ep_within_tolerance"] & out["theta_within_tolerance"])).sum())
    if failing:
        logger.warning(f"{failing} Table-1 rows differ from the printed values")
    return out


def formatted_table1(comparison: pd.DataFrame) -> pd.DataFrame:
    """Percentages with one decimal and ϑ with two, for display."""
    shown = comparison.loc[:, ["source", "period"]].copy()
    shown["sigma"] = comparison["sigma"].map(lambda v: f"{v:.3f}")
    shown["predicted_ep"] = comparison["predicted_ep"].map(lambda v: f"{100 * v:.1f}%")
    shown["ep"] = comparison["ep"].map(lambda v: f"{100 * v:.2f}%")
    shown["theta"] = comparison["implied_theta"].map(lambda v: f"{v:.2f}")
    return shown


def puzzle_summary() -> Dict[str, float]:
    """The nominal and real short-rate calculations on post-war U.S. inputs."""
    constant = short_rate_constant(NOMINAL_CONSUMPTION_DRIFT, IMPATIENCE, CONSUMPTION_VOLATILITY)
    heterogeneous = short_rate(
        NOMINAL_CONSUMPTION_DRIFT, -IMPATIENCE, NOMINAL_CONSUMPTION_RISK_PREMIUM
    )
    real = short_rate(REAL_CONSUMPTION_DRIFT, -IMPATIENCE, REAL_CONSUMPTION_RISK_PREMIUM)
    return {
        "nominal_constant_impatience": constant,
        "nominal_heterogeneous_impatience": heterogeneous,
        "real_heterogeneous_impatience": real,
        "homogeneous_precautionary_correction": CONSUMPTION_VOLATILITY ** 2,
        "observed_nominal_rate": OBSERVED_NOMINAL_RATE,
        "constant_overprediction": constant - OBSERVED_NOMINAL_RATE,
        "heterogeneous_gap": heterogeneous - OBSERVED_NOMINAL_RATE,
    }


@dataclass(frozen=True, eq=False)
class MarketDecomposition:
    """Per-step decomposition of a constructed market; arrays are (N,) unless noted."""
    consumption_term: np.ndarray
    consumption_term_se: np.ndarray
    impatience_term: np.ndarray
    impatience_term_se: np.ndarray
    excess_return: np.ndarray
    short_rate: np.ndarray
    short_rate_decomposed: np.ndarray
    consistency: StatTestReport
    amplifying_steps: np.ndarray

    @property
    def total_premium(self) -> np.ndarray:
        return self.consumption_term - self.impatience_term

    def to_frame(self, times: np.ndarray) -> pd.DataFrame:
        return pd.DataFrame({
            "t": np.asarray(times)[: self.consumption_term.shape[0]],
            "consumption_term": self.consumption_term,
            "consumption_term_se": self.consumption_term_se,
            "impatience_term": self.impatience_term,
            "impatience_term_se": self.impatience_term_se,
            "total_premium": self.total_premium,
            "excess_return": self.excess_return,
            "short_rate": self.short_rate,
            "short_rate_decomposed": self.short_rate_decomposed,
            "consistency_passed": self.consistency.step_passed,
            "impatience_amplifies": self.amplifying_steps,
        })


def _inner_se(a: np.ndarray, a_se: np.ndarray, b: np.ndarray, b_se: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((a * b_se) ** 2 + (b * a_se) ** 2, axis=1))


def decompose_from_market(
    market: MarketPath,
    confidence_sigmas: float = DEFAULT_SIGMAS,
    required_fraction: float = DEFAULT_PASS_FRACTION,
    floor: float = 1e-9,
) -> MarketDecomposition:
    """
    Estimated premium and short-rate decompositions along a constructed market.

    Consumption, loading and price volatilities come from the market's
    regression estimates; the consistency check tests ϑ ≈ σ^c − σ^{−∂η}
    componentwise inside a confidence band.

    Raises:
        EquilibriumError: the market carries no coefficient estimates
    """
    coefficients = market.require_coefficients()
    consumption = coefficients.consumption
    loading = coefficients.loading
    price = coefficients.price
    theta = coefficients.price_of_risk

    consumption_term = np.sum(consumption.diffusion * price.diffusion, axis=1)
    impatience_term = np.sum(loading.diffusion * price.diffusion, axis=1)
    consistency = band_test(
        theta - (consumption.diffusion - loading.diffusion),
        np.sqrt(coefficients.price_of_risk_se ** 2 + consumption.diffusion_se ** 2
                + loading.diffusion_se ** 2),
        name="theta - (sigma_c - sigma_loading)",
        confidence_sigmas=confidence_sigmas,
        required_fraction=required_fraction,
        floor=floor,
    )
    decomposed_rate = (consumption.drift - loading.drift) - np.sum(consumption.diffusion * theta,
                                                                   axis=1)
    amplifying = impatience_term < 0
    logger.info(
        f"decomposition: impatience term amplifies the premium at "
        f"{int(amplifying.sum())}/{amplifying.size} steps"
    )
    return MarketDecomposition(
        consumption_term=consumption_term,
        consumption_term_se=_inner_se(consumption.diffusion, consumption.diffusion_se,
                                      price.diffusion, price.diffusion_se),
        impatience_term=impatience_term,
        impatience_term_se=_inner_se(loading.diffusion, loading.diffusion_se,
                                     price.diffusion, price.diffusion_se),
        excess_return=price.drift + coefficients.dividend_yield - coefficients.rate,
        short_rate=coefficients.rate,
        short_rate_decomposed=decomposed_rate,
        consistency=consistency,
        amplifying_steps=amplifying,
    )
