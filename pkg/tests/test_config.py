"""Tests for TOML run configuration loading and validation."""

from pathlib import Path

import numpy as np
import pytest

from duesenberry.config import SUITES, load_config, locate, parse_config
from duesenberry.scenarios import build_scenario
from duesenberry.utils.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


class TestParseConfig:
    """Valid configurations."""

    def test_small_config(self, small_config_text):
        config = parse_config(small_config_text)
        assert config.seed == 5
        assert config.flow_engine.grid().steps == 20
        assert config.population.atoms == 3
        assert config.cli.suites == list(SUITES)
        assert config.equilibrium.kappa_mode == "auto"

    def test_scenario_spec(self, small_config_text):
        spec = parse_config(small_config_text).scenario_spec()
        assert spec.kind == "example51"
        assert spec.measure.size == 3
        np.testing.assert_allclose(spec.y, 50.0 * np.exp(0.2 * np.array([-1.0, 0.0, 1.0])))
        np.testing.assert_array_equal(spec.initial_share, [0.2, 0.3, 0.4])
        assert spec.nested.seed == 5

    def test_digest_is_stable(self, small_config_text):
        first = parse_config(small_config_text)
        second = parse_config(small_config_text)
        assert first.digest == second.digest
        assert first.with_seed(6).digest != first.digest

    def test_with_seed(self, small_config_text):
        config = parse_config(small_config_text)
        assert config.with_seed(9).seed == 9
        assert config.seed == 5
        with pytest.raises(ConfigError):
            config.with_seed(-1)

    @pytest.mark.parametrize("name", ["desk_example51.toml", "desk_example53.toml",
                                      "rentier.toml"])
    def test_bundled_configs(self, name):
        config = load_config(CONFIGS / name)
        inputs = build_scenario(config.scenario_spec())
        assert inputs.budget_gap <= 1e-12


class TestConfigErrors:
    """Every failure names its section, key and line."""

    def test_missing_seed(self, small_config_text):
        with pytest.raises(ConfigError, match="seed") as excinfo:
            parse_config(small_config_text.replace("seed = 5\n", ""))
        assert excinfo.value.line == 2

    def test_missing_flow_engine(self):
        with pytest.raises(ConfigError, match=r"\[flow_engine\] section is required"):
            parse_config('[population]\natoms = 2\n')

    def test_unknown_key(self, small_config_text):
        text = small_config_text.replace("seed = 5\n", "seed = 5\ncolour = 1\n")
        with pytest.raises(ConfigError, match="unknown key 'colour' in \\[flow_engine\\]") \
                as excinfo:
            parse_config(text)
        assert excinfo.value.line == 8

    def test_unknown_section(self, small_config_text):
        with pytest.raises(ConfigError, match=r"unknown section \[extras\]") as excinfo:
            parse_config(small_config_text + "[extras]\nx = 1\n")
        assert excinfo.value.line == 16

    def test_syntax_error(self, small_config_text):
        with pytest.raises(ConfigError, match="TOML syntax error") as excinfo:
            parse_config(small_config_text.replace("seed = 5", "seed = "))
        assert excinfo.value.line == 7

    def test_bad_value_names_key(self, small_config_text):
        with pytest.raises(ConfigError, match=r"\[flow_engine\] steps") as excinfo:
            parse_config(small_config_text.replace("steps = 20", "steps = 0"))
        assert excinfo.value.line == 5

    def test_cocycle_index_beyond_grid(self, small_config_text):
        with pytest.raises(ConfigError, match="cocycle_index"):
            parse_config(small_config_text + "[validation_oracle]\ncocycle_index = 20\n")

    def test_analytic_kappa_needs_proportional_price(self, small_config_text):
        text = small_config_text.replace('kind = "example51"', 'kind = "tabulated"')
        text = text.replace("initial_share = [0.2, 0.3, 0.4]\ndecay = [0.01, 0.01, 0.01]\n", "")
        with pytest.raises(ConfigError, match="analytic"):
            parse_config(text + '[equilibrium]\nkappa_mode = "analytic"\n')
        assert parse_config(text).equilibrium.kappa_mode == "auto"

    def test_unknown_suite(self, small_config_text):
        with pytest.raises(ConfigError, match="unknown verification suites"):
            parse_config(small_config_text + '[cli]\nsuites = ["cocycles", "bogus"]\n')

    def test_ornstein_uhlenbeck_needs_constant_impatience(self, small_config_text):
        text = small_config_text.replace('model = "desk"', 'model = "ornstein_uhlenbeck"')
        with pytest.raises(ConfigError, match="constant impatience"):
            parse_config(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.toml")


class TestLocate:
    """Line lookup inside TOML text."""

    def test_key_and_header(self, small_config_text):
        assert locate(small_config_text, "flow_engine", "paths") == 6
        assert locate(small_config_text, "scenarios") == 12
        assert locate(small_config_text, "scenarios", "absent") == 12
        assert locate(small_config_text, "equilibrium") is None
