"""End-to-end tests of the duesenberry command line."""

import json

import pandas as pd
import pytest

from duesenberry.cli import build_parser, main


RENTIER_CONFIG = """
[flow_engine]
model = "ornstein_uhlenbeck"
volatility = [0.3]
gamma_range = [0.02, 0.02]
horizon = 1.0
steps = 20
paths = 120
seed = 42

[population]
atoms = 1

[scenarios]
kind = "rentier"
income_slope = 0.0
wealth_slope = 0.0

[cli]
suites = ["cocycles", "clearing", "wealth_martingale", "no_arbitrage", "invariance", "joneses"]
"""


@pytest.fixture
def rentier_config(tmp_path):
    path = tmp_path / "rentier.toml"
    path.write_text(RENTIER_CONFIG, encoding="utf-8")
    return path


def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


class TestCalibrate:
    """Table-1 recomputation needs no config."""

    def test_writes_outputs(self, tmp_path):
        out = tmp_path / "calibration"
        assert main(["calibrate", "--out", str(out)]) == 0
        lines = (out / "table1_comparison.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0].startswith("# config_hash=")
        assert lines[0].endswith("seed=None")
        frame = pd.read_csv(out / "table1_comparison.csv", comment="#")
        assert len(frame) == 6
        puzzle = read_json(out / "puzzle.json")
        assert puzzle["short_rates"]["observed_nominal_rate"] == 0.0473

    def test_missing_table(self, tmp_path):
        assert main(["calibrate", "--out", str(tmp_path), "--table",
                     str(tmp_path / "absent.csv")]) == 2


class TestSimulate:
    """Market paths, coefficient estimates and the run summary."""

    def test_needs_config(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path)]) == 2

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[flow_engine]\nmodel = \"desk\"\n", encoding="utf-8")
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == 2

    def test_rentier_run(self, tmp_path, rentier_config):
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(rentier_config), "--out", str(out)]) == 0
        assert (out / "paths.csv").exists()
        assert (out / "coefficients.csv").exists()
        summary = read_json(out / "run.json")
        assert summary["seed"] == 42
        assert summary["scenario"] == "rentier"
        assert summary["feller"] == "non-explosive"
        assert "smooth_market" not in summary
        paths = pd.read_csv(out / "paths.csv", comment="#")
        assert len(paths) == 21
        assert paths["P_mean"].iloc[-1] == pytest.approx(50.0, rel=1e-12)

    def test_seed_override(self, tmp_path, rentier_config):
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(rentier_config), "--out", str(out),
                     "--seed", "7"]) == 0
        summary = read_json(out / "run.json")
        assert summary["seed"] == 7
        header = (out / "paths.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header == f"# config_hash={summary['config_hash']} seed=7"


class TestVerify:
    """Verification suites and injected faults."""

    def test_rentier_passes(self, tmp_path, rentier_config):
        assert main(["verify", "--config", str(rentier_config), "--out", str(tmp_path)]) == 0
        report = read_json(tmp_path / "verification.json")
        assert report["all_passed"]
        assert report["fault"] is None
        assert [s["suite"] for s in report["suites"]] == [
            "cocycles", "clearing", "wealth_martingale", "no_arbitrage", "joneses", "invariance"]

    def test_kernel_scale_is_detected(self, tmp_path, rentier_config):
        assert main(["verify", "--config", str(rentier_config), "--out", str(tmp_path),
                     "--inject-fault", "kernel_scale"]) == 1
        report = read_json(tmp_path / "verification.json")
        assert "clearing" in report["failed_suites"]
        assert report["fault"] == "kernel_scale"

    def test_wealth_shock_is_detected(self, tmp_path, rentier_config):
        assert main(["verify", "--config", str(rentier_config), "--out", str(tmp_path),
                     "--inject-fault", "wealth_shock"]) == 1
        report = read_json(tmp_path / "verification.json")
        assert report["failed_suites"] == ["joneses"]

    def test_unknown_fault_is_rejected(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["verify", "--inject-fault", "gremlins"])


class TestDecompose:
    """Per-step decomposition output."""

    def test_rentier_decomposition(self, tmp_path, rentier_config):
        assert main(["decompose", "--config", str(rentier_config), "--out", str(tmp_path)]) == 0
        frame = pd.read_csv(tmp_path / "decomposition.csv", comment="#")
        assert len(frame) == 20


DESK_CONFIG = """
[flow_engine]
model = "desk"
horizon = 1.0
steps = 20
paths = 120
seed = 8

[population]
atoms = 3

[scenarios]
kind = "example51"
initial_share = [0.2, 0.3, 0.4]
decay = [0.01, 0.01, 0.01]

[preferences]
cases = 20

[cli]
suites = ["brute_force_aggregation", "duality", "time_consistency", "clearing",
          "labor_value", "decomposition"]
"""


class TestDeskVerification:
    """Deterministic suites on a small desk economy."""

    @pytest.fixture
    def desk_config(self, tmp_path):
        path = tmp_path / "desk.toml"
        path.write_text(DESK_CONFIG, encoding="utf-8")
        return path

    def test_suites_pass(self, tmp_path, desk_config):
        assert main(["verify", "--config", str(desk_config), "--out", str(tmp_path)]) == 0

    def test_weight_perturbation_is_detected(self, tmp_path, desk_config):
        assert main(["verify", "--config", str(desk_config), "--out", str(tmp_path),
                     "--inject-fault", "weight_perturbation"]) == 1
        report = read_json(tmp_path / "verification.json")
        assert report["failed_suites"] == ["brute_force_aggregation"]

    def test_simulate_reports_smooth_market(self, tmp_path, desk_config):
        assert main(["simulate", "--config", str(desk_config), "--out", str(tmp_path)]) == 0
        summary = read_json(tmp_path / "run.json")
        assert summary["smooth_market"]["feasible"] is False
        assert "feller" not in summary
        coefficients = pd.read_csv(tmp_path / "coefficients.csv", comment="#")
        assert {"theta_0", "theta_analytic_0", "sigma_1_se"} <= set(coefficients.columns)
