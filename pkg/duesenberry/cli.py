"""
Command-line entry point: simulate, verify, calibrate, decompose.

Usage:
    duesenberry simulate  --config configs/desk_example51.toml --out runs/ex51
    duesenberry verify    --config configs/desk_example51.toml --inject-fault rate_shift
    duesenberry calibrate --out runs/table1
    duesenberry decompose --config configs/desk_example51.toml --seed 43

Exit status: 0 on success, 1 when a verification suite fails, 2 on any
configuration, data or model error.
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from colorama import Fore, Style, init as colorama_init
from tqdm import tqdm

from duesenberry import __version__
from duesenberry.config import RunConfig, load_config
from duesenberry.decomp_calibration import (
    decompose_from_market,
    load_table1,
    puzzle_summary,
    table1_comparison,
)
from duesenberry.equilibrium import (
    EquilibriumInputs,
    MarketPath,
    build_market,
    equilibrium_policy,
    inject_kernel_scale,
    inject_rate_shift,
    joneses_identity,
    multiplicative_invariance,
    verify_clearing,
    verify_no_arbitrage,
    verify_sigma_w_equals_theta,
)
from duesenberry.flow_engine import (
    Ensemble,
    FlowModel,
    TimeGrid,
    feller_for_model,
    path_increments,
    simulate_flow,
    verify_cocycles,
)
from duesenberry.policy import aggregate_policy, deflated_wealth_increments, rolling_gap_study
from duesenberry.population import (
    ItoTestFunction,
    PopulationMeasure,
    aggregate,
    ito_aggregation_mesh_study,
)
from duesenberry.preferences import (
    IsoelasticPreference,
    check_duality,
    inverse_marginal_1,
    inverse_marginal_2,
    time_consistency_residual,
)
from duesenberry.scenarios import build_scenario, labor_value_check, smooth_market_diagnostic
from duesenberry.utils.errors import ConfigError, DuesenberryError
from duesenberry.utils.logging_setup import setup_logger
from duesenberry.utils.report_tracker import VerificationTracker, write_csv, write_json
from duesenberry.utils.run_helpers import RunTimer, config_hash, get_settings, log_run_step
from duesenberry.validation_oracle import brute_force_aggregate, convergence_order, martingale_test


# Configure logging
logger = logging.getLogger(__name__)


FAULTS = ("rate_shift", "kernel_scale", "weight_perturbation", "wealth_shock")
SERIES = {
    "state_price": "H",
    "price": "P",
    "total_wealth": "PW",
    "consumption": "c",
    "eta": "eta",
    "loading": "loading",
}
ORDER_BAND = (0.8, 1.2)
DUALITY_TOLERANCE = 1e-6
CONSISTENCY_TOLERANCE = 1e-6
INCONSISTENCY_THRESHOLD = 1e-5
AGGREGATION_TOLERANCE = 1e-12
INVARIANCE_TOLERANCE = 1e-9
WEIGHT_FAULT = 1.001
WEALTH_FAULT = 0.1


# ==============================================================================
# Run pipeline
# ==============================================================================

@dataclasses.dataclass(frozen=True, eq=False)
class RunState:
    config: RunConfig
    inputs: EquilibriumInputs
    ensemble: Ensemble
    market: MarketPath


def prepare_run(config: RunConfig) -> RunState:
    """Build the scenario, simulate the flow from its atoms, construct the market."""
    spec = config.scenario_spec()
    inputs = build_scenario(spec)
    section = config.flow_engine
    with RunTimer("simulate") as timer:
        ensemble = simulate_flow(spec.model, section.grid(), spec.measure.points,
                                 section.paths, section.seed)
    log_run_step("simulate", seconds=timer.elapsed, paths=ensemble.paths,
                 steps=section.steps, flagged_fraction=ensemble.flagged_fraction)
    with RunTimer("build_market") as timer:
        market = build_market(
            inputs, ensemble,
            truncation_tolerance=config.equilibrium.truncation_tolerance,
            kappa_mode=config.equilibrium.kappa_mode,
            estimate=config.equilibrium.estimate,
        )
    log_run_step("build_market", seconds=timer.elapsed, scenario=market.scenario,
                 estimator=market.estimator)
    return RunState(config=config, inputs=inputs, ensemble=ensemble, market=market)


def _output_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {path}: {e}") from e
    return path


def paths_frame(market: MarketPath) -> pd.DataFrame:
    """Cross-path mean and 5/50/95% quantiles of the market series per grid step."""
    valid = market.valid
    frame = pd.DataFrame({
        "step": np.arange(market.ensemble.grid.steps + 1),
        "t": market.ensemble.grid.times,
    })
    for attribute, label in SERIES.items():
        values = getattr(market, attribute)[valid]
        frame[f"{label}_mean"] = np.mean(values, axis=0)
        for q in (5, 50, 95):
            frame[f"{label}_q{q:02d}"] = np.percentile(values, q, axis=0)
    return frame


def coefficients_frame(market: MarketPath) -> pd.DataFrame:
    """Estimated r, ϑ, σ (with standard errors), κ and, when known, the analytic ϑ."""
    coefficients = market.require_coefficients()
    grid = market.ensemble.grid
    frame = pd.DataFrame({
        "step": np.arange(grid.steps),
        "t": grid.times[:-1],
        "r": coefficients.rate,
        "r_se": coefficients.state_price.drift_se,
        "dividend_yield": coefficients.dividend_yield,
        "kappa": coefficients.kappa,
        "degenerate": coefficients.degenerate,
    })
    theta = coefficients.price_of_risk
    sigma = coefficients.price
    analytic = None
    if market.analytic_price_of_risk is not None:
        analytic = np.mean(market.analytic_price_of_risk[market.valid][:, :-1], axis=0)
    for k in range(theta.shape[1]):
        frame[f"theta_{k}"] = theta[:, k]
        frame[f"theta_{k}_se"] = coefficients.price_of_risk_se[:, k]
        if analytic is not None:
            frame[f"theta_analytic_{k}"] = analytic[:, k]
        frame[f"sigma_{k}"] = sigma.diffusion[:, k]
        frame[f"sigma_{k}_se"] = sigma.diffusion_se[:, k]
    return frame


def run_summary(state: RunState) -> Dict[str, Any]:
    market = state.market
    config = state.config
    summary: Dict[str, Any] = {
        "version": __version__,
        "config": config.model_dump(mode="json"),
        "config_hash": config.digest,
        "seed": config.seed,
        "scenario": market.scenario,
        "estimator": market.estimator,
        "flagged_fraction": state.ensemble.flagged_fraction,
        "truncation_horizon": market.truncation_horizon,
        "budget_scale": state.inputs.budget_scale,
        "diagnostics": market.diagnostics,
    }
    model = state.ensemble.model
    if model.dimension == 1 and model.noise_dimension == 1:
        summary["feller"] = feller_for_model(model).verdict.value
    if (model.noise_dimension >= 2 and state.inputs.income_gradient is not None
            and model.impatience_gradient is not None):
        summary["smooth_market"] = smooth_market_diagnostic(market).summary()
    return summary


def cmd_simulate(config: RunConfig, out: Path) -> int:
    state = prepare_run(config)
    out = _output_dir(out)
    digest, seed = config.digest, config.seed
    write_csv(paths_frame(state.market), out / "paths.csv", digest, seed)
    if state.market.coefficients is not None:
        write_csv(coefficients_frame(state.market), out / "coefficients.csv", digest, seed)
    else:
        logger.info("coefficient estimates skipped; coefficients.csv not written")
    write_json(run_summary(state), out / "run.json")
    logger.info(f"simulation outputs written to {out}")
    return 0


# ==============================================================================
# Verification suites
# ==============================================================================

def _ito_test_function() -> ItoTestFunction:
    """f(t, x) = e^{−t/10}·Σ sin xᵢ + ½|x|²."""
    def value(t: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.exp(-0.1 * t) * np.sum(np.sin(x), axis=-1) + 0.5 * np.sum(x * x, axis=-1)

    def time_derivative(t: np.ndarray, x: np.ndarray) -> np.ndarray:
        return -0.1 * np.exp(-0.1 * t) * np.sum(np.sin(x), axis=-1)

    def gradient(t: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.exp(-0.1 * t)[..., None] * np.cos(x) + x

    def hessian(t: np.ndarray, x: np.ndarray) -> np.ndarray:
        diagonal = 1.0 - np.exp(-0.1 * t)[..., None] * np.sin(x)
        return diagonal[..., :, None] * np.eye(x.shape[-1])

    return ItoTestFunction(value, time_derivative, gradient, hessian)


def _without_growth(model: FlowModel) -> FlowModel:
    return dataclasses.replace(model, growth=lambda x: np.zeros(x.shape[:-1]),
                               growth_bounds=(0.0, 0.0))


def _type_growth(model: FlowModel) -> FlowModel:
    return dataclasses.replace(model, growth=lambda x: 0.02 * np.tanh(x[..., 0]),
                               growth_bounds=(-0.02, 0.02))


def suite_cocycles(state: RunState, fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    index = state.config.validation_oracle.cocycle_index or state.ensemble.grid.steps // 2
    report = verify_cocycles(state.ensemble, index)
    return report.passed, report.summary()


def suite_ito_aggregation(state: RunState, fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    section = state.config.validation_oracle
    model = _without_growth(state.ensemble.model)
    measure = state.inputs.measure
    factors = sorted(section.ito_factors)
    fine_steps = 40 * factors[-1]
    grid = TimeGrid(state.ensemble.grid.t0, state.ensemble.grid.t0 + 1.0, fine_steps)
    paths = min(state.config.flow_engine.paths, 200)
    increments = path_increments(state.config.seed, paths, fine_steps, model.noise_dimension,
                                 grid.dt)
    reports, fit = ito_aggregation_mesh_study(model, measure, grid, increments,
                                              _ito_test_function(), factors)
    passed = ORDER_BAND[0] <= fit.slope <= ORDER_BAND[1]
    return passed, {
        "order": fit.slope,
        "order_stderr": fit.stderr,
        "meshes": list(fit.meshes),
        "horizon_residuals": list(fit.errors),
    }


def suite_brute_force_aggregation(state: RunState,
                                  fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    section = state.config.validation_oracle
    model = _type_growth(state.ensemble.model)
    rng = np.random.default_rng(np.random.SeedSequence([state.config.seed, 2]))
    atoms = section.brute_force_atoms
    points = np.zeros((atoms, model.dimension))
    points[:, 0] = np.linspace(-2.0, 2.0, atoms)
    weights = rng.uniform(0.5, 1.5, atoms)
    measure = PopulationMeasure.discrete(points, weights / weights.sum())
    grid = TimeGrid(0.0, 1.0, 20)
    ensemble = simulate_flow(model, grid, points, paths=1, seed=state.config.seed, threads=1)

    def field(t: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.exp(0.5 * x[..., 0])

    vectorized = float(aggregate(ensemble, measure, field, provenance="oracle").values[0, -1])
    oracle_weights = measure.weights.copy()
    if fault == "weight_perturbation":
        oracle_weights[0] *= WEIGHT_FAULT
        logger.warning(f"fault injected: first oracle weight scaled by {WEIGHT_FAULT}")
    oracle = brute_force_aggregate(
        list(points),
        oracle_weights,
        field(grid.times, ensemble.states)[0, :, -1],
        ensemble.log_weights[0, :, -1],
    )
    relative = abs(vectorized - oracle) / abs(oracle)
    return relative <= AGGREGATION_TOLERANCE, {"atoms": atoms, "relative_error": relative}


def _preference_cases(config: RunConfig, stream: int) -> List[Tuple[IsoelasticPreference, float, float]]:
    section = config.preferences
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, stream]))
    cases = []
    for _ in range(section.cases):
        pref = IsoelasticPreference(alpha=float(rng.uniform(*section.alpha_range)),
                                    beta=float(rng.uniform(*section.beta_range)))
        cases.append((pref, float(rng.uniform(0.0, section.horizon)),
                      float(np.exp(rng.uniform(-0.7, 0.7)))))
    return cases


def suite_duality(state: RunState, fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    worst = 0.0
    for pref, t, z in _preference_cases(state.config, 3):
        for terminal in (False, True):
            inverse = inverse_marginal_2 if terminal else inverse_marginal_1
            # value of the dual problem at the optimum: 𝓘·z·(1/α − 1)
            level = float(inverse(pref, t, z)) * z * (1.0 / pref.alpha - 1.0)
            worst = max(worst, check_duality(pref, t, z, terminal=terminal) / level)
    return worst <= DUALITY_TOLERANCE, {"max_relative_residual": worst}


def suite_time_consistency(state: RunState, fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    section = state.config.preferences
    late = section.horizon
    consistent = 0.0
    perturbed = np.inf
    for pref, t, z in _preference_cases(state.config, 4):
        level = float(inverse_marginal_2(pref, t, z))
        consistent = max(consistent, time_consistency_residual(pref, t, late, z) / level)
        if late - t > 1.0:
            broken = pref.perturbed(1.0 + section.perturbation)
            residual = time_consistency_residual(broken, t, late, z)
            perturbed = min(perturbed, residual / float(inverse_marginal_2(broken, t, z)))
    passed = consistent <= CONSISTENCY_TOLERANCE and perturbed > INCONSISTENCY_THRESHOLD
    return passed, {"max_consistent_residual": consistent,
                    "min_perturbed_residual": perturbed}


def suite_rolling_limit(state: RunState, fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    section = state.config.validation_oracle
    meshes = sorted(section.rolling_meshes, reverse=True)
    steps = int(round(section.rolling_horizon / meshes[-1])) * 2
    t0 = state.ensemble.grid.t0
    grid = TimeGrid(t0, t0 + section.rolling_horizon, steps)
    ensemble = simulate_flow(state.ensemble.model, grid, state.inputs.measure.points,
                             section.rolling_paths, state.config.seed)
    market = build_market(state.inputs, ensemble, estimate=False)
    pairs = rolling_gap_study(ensemble, meshes, market.state_price, 1.0, state.inputs.y)
    fit = convergence_order(pairs)
    passed = ORDER_BAND[0] <= fit.slope <= ORDER_BAND[1]
    return passed, {"order": fit.slope, "order_stderr": fit.stderr,
                    "meshes": [m for m, _ in pairs], "gaps": [g for _, g in pairs]}


def suite_clearing(state: RunState, fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    policy = aggregate_policy(equilibrium_policy(state.market), state.inputs.measure)
    report = verify_clearing(state.market, policy)
    return report.passed, report.summary()


def suite_wealth_martingale(state: RunState, fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    market = state.market
    section = state.config.validation_oracle
    policy = equilibrium_policy(market)
    increments = deflated_wealth_increments(policy, state.inputs.measure, market.dt)
    valid = market.valid
    level = float(np.mean(np.abs(
        np.einsum("k,mkj->mj", state.inputs.measure.weights,
                  policy.state_price[:, None, :] * policy.net_wealth)[valid])))
    report = martingale_test(
        np.where(valid[:, None], increments, 0.0),
        name="deflated net wealth",
        confidence_sigmas=section.confidence_sigmas,
        required_fraction=section.pass_fraction,
        floor=section.discretization_floor * market.dt ** 2 * level,
        valid=valid,
    )
    return report.passed, report.summary()


def suite_no_arbitrage(state: RunState, fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    section = state.config.validation_oracle
    report = verify_no_arbitrage(state.market, section.confidence_sigmas,
                                 section.pass_fraction, section.discretization_floor)
    return report.passed, report.summary()


def suite_sigma_w_equals_theta(state: RunState,
                               fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    section = state.config.validation_oracle
    report = verify_sigma_w_equals_theta(state.market, section.confidence_sigmas,
                                         section.pass_fraction)
    return report.passed, report.summary()


def suite_labor_value(state: RunState, fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    report = labor_value_check(state.market)
    return report.passed, report.summary()


def suite_joneses(state: RunState, fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    shock = WEALTH_FAULT if fault == "wealth_shock" else 0.0
    if shock:
        logger.warning(f"fault injected: reference wealth gain shocked by {shock:+.2f}")
    report = joneses_identity(state.market, equilibrium_policy(state.market), 0, shock=shock)
    return report.passed, report.summary()


def suite_decomposition(state: RunState, fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    section = state.config.validation_oracle
    decomposition = decompose_from_market(state.market, section.confidence_sigmas,
                                          section.pass_fraction)
    rate_gap = float(np.max(np.abs(decomposition.short_rate - decomposition.short_rate_decomposed)))
    scale = max(float(np.max(np.abs(decomposition.short_rate))), 1.0)
    passed = decomposition.consistency.passed and rate_gap <= INVARIANCE_TOLERANCE * scale
    return passed, {"consistency": decomposition.consistency.summary(),
                    "short_rate_gap": rate_gap,
                    "amplifying_steps": int(np.sum(decomposition.amplifying_steps))}


def suite_invariance(state: RunState, fault: Optional[str]) -> Tuple[bool, Dict[str, Any]]:
    report = multiplicative_invariance(state.inputs, state.ensemble)
    passed = (report.wealth_scaling_bitwise
              and report.income_scaling_ratio_change <= INVARIANCE_TOLERANCE
              and report.income_scaling_theta_change <= INVARIANCE_TOLERANCE
              and report.income_scaling_kernel_error <= INVARIANCE_TOLERANCE)
    return passed, report.summary()


Suite = Callable[[RunState, Optional[str]], Tuple[bool, Dict[str, Any]]]

SUITE_FUNCTIONS: Dict[str, Suite] = {
    "cocycles": suite_cocycles,
    "ito_aggregation": suite_ito_aggregation,
    "brute_force_aggregation": suite_brute_force_aggregation,
    "duality": suite_duality,
    "time_consistency": suite_time_consistency,
    "rolling_limit": suite_rolling_limit,
    "clearing": suite_clearing,
    "wealth_martingale": suite_wealth_martingale,
    "no_arbitrage": suite_no_arbitrage,
    "sigma_w_equals_theta": suite_sigma_w_equals_theta,
    "labor_value": suite_labor_value,
    "joneses": suite_joneses,
    "decomposition": suite_decomposition,
    "invariance": suite_invariance,
}


def apply_fault(state: RunState, fault: Optional[str]) -> RunState:
    """Market-level faults replace the constructed market; others act inside their suite."""
    if fault == "rate_shift":
        return dataclasses.replace(state, market=inject_rate_shift(state.market))
    if fault == "kernel_scale":
        return dataclasses.replace(state, market=inject_kernel_scale(state.market))
    return state


def run_verification(config: RunConfig, fault: Optional[str] = None) -> VerificationTracker:
    """
    Run the configured suites on one seeded market.

    A suite that raises a package error is recorded as failed with the message.
    """
    if fault is not None and fault not in FAULTS:
        raise ConfigError(f"unknown fault '{fault}'; choose from {list(FAULTS)}")
    state = apply_fault(prepare_run(config), fault)
    tracker = VerificationTracker(config_hash=config.digest, seed=config.seed)
    names = [name for name in SUITE_FUNCTIONS if name in config.cli.suites]
    progress = tqdm(names, desc="verify", disable=not logger.isEnabledFor(logging.INFO))
    for name in progress:
        with RunTimer(name) as timer:
            try:
                passed, metrics = SUITE_FUNCTIONS[name](state, fault)
            except DuesenberryError as e:
                logger.error(f"suite {name} raised: {e}")
                passed, metrics = False, {"error": str(e)}
        tracker.track_suite(name, passed, metrics=metrics)
        log_run_step(name, seconds=timer.elapsed, passed=passed)
    return tracker


def cmd_verify(config: RunConfig, out: Path, fault: Optional[str] = None) -> int:
    tracker = run_verification(config, fault)
    out = _output_dir(out)
    payload = tracker.get_session_report() | {"fault": fault}
    write_json(payload, out / "verification.json")
    tracker.print_summary()
    return 0 if tracker.all_passed else 1


# ==============================================================================
# Calibration and decomposition
# ==============================================================================

def cmd_calibrate(out: Path, table: Optional[Path] = None) -> int:
    frame = load_table1(table)
    comparison = table1_comparison(frame)
    digest = config_hash({"command": "calibrate",
                          "table": frame.astype(str).to_dict(orient="list")})
    out = _output_dir(out)
    write_csv(comparison, out / "table1_comparison.csv", digest, None)
    puzzle = puzzle_summary()
    write_json({"config_hash": digest, "seed": None, "short_rates": puzzle},
               out / "puzzle.json")

    colorama_init()
    for _, row in comparison.iterrows():
        ok = bool(row["ep_within_tolerance"] and row["theta_within_tolerance"])
        mark = f"{Fore.GREEN}✓{Style.RESET_ALL}" if ok else f"{Fore.RED}✗{Style.RESET_ALL}"
        print(f"  {mark} {row['source']:<22} {row['period']:<10} "
              f"EP^={100 * row['predicted_ep']:.1f}%  theta={row['implied_theta']:.2f}")
    print(f"  constant-impatience r = {100 * puzzle['nominal_constant_impatience']:.2f}%  "
          f"heterogeneous r = {100 * puzzle['nominal_heterogeneous_impatience']:.2f}%  "
          f"real r = {100 * puzzle['real_heterogeneous_impatience']:.2f}%")
    within = comparison["ep_within_tolerance"] & comparison["theta_within_tolerance"]
    return 0 if bool(within.all()) else 1


def cmd_decompose(config: RunConfig, out: Path) -> int:
    state = prepare_run(config)
    decomposition = decompose_from_market(
        state.market,
        config.validation_oracle.confidence_sigmas,
        config.validation_oracle.pass_fraction,
    )
    out = _output_dir(out)
    write_csv(decomposition.to_frame(state.ensemble.grid.times), out / "decomposition.csv",
              config.digest, config.seed)
    return 0 if decomposition.consistency.passed else 1


# ==============================================================================
# Argument parsing
# ==============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="Override the configured seed")
    common.add_argument("--out", type=Path, help="Output directory (defaults to [cli] out_dir)")
    common.add_argument("--verbose", action="store_true", help="Enable debug logging")

    parser = argparse.ArgumentParser(
        prog="duesenberry",
        description="Duesenberry equilibrium engine: simulate, verify and calibrate",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("simulate", parents=[common], help="Simulate and write market paths")
    verify = commands.add_parser("verify", parents=[common], help="Run the verification suites")
    verify.add_argument("--inject-fault", choices=FAULTS, default=None,
                        help="Break one identity on purpose; its suite must fail")
    calibrate = commands.add_parser("calibrate", parents=[common],
                                    help="Recompute Table 1 and the short-rate calculations")
    calibrate.add_argument("--table", type=Path, default=None, help="Alternative Table-1 CSV")
    commands.add_parser("decompose", parents=[common],
                        help="Per-step premium and short-rate decomposition")
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.config is None:
        raise ConfigError(f"'{args.command}' needs --config")
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "calibrate":
        return cmd_calibrate(args.out or Path("runs"), args.table)
    config = _resolve_config(args)
    if config.cli.log_file is not None:
        setup_logger("duesenberry", config.cli.log_file,
                     "DEBUG" if args.verbose else get_settings().log_level)
    out = args.out or Path(config.cli.out_dir)
    if args.command == "simulate":
        return cmd_simulate(config, out)
    if args.command == "verify":
        return cmd_verify(config, out, args.inject_fault)
    return cmd_decompose(config, out)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the command line."""
    args = build_parser().parse_args(argv)
    settings = get_settings()
    setup_logger("duesenberry", settings.log_file,
                 "DEBUG" if args.verbose else settings.log_level)
    try:
        return dispatch(args)
    except DuesenberryError as e:
        logger.error(str(e))
        colorama_init()
        print(f"{Fore.RED}✗ {e}{Style.RESET_ALL}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
