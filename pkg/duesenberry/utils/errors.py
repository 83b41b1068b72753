"""
Exception hierarchy for duesenberry-engine.

Every domain failure raises a subclass of DuesenberryError so callers (and the
CLI) can catch the package base class in one place.
"""

from typing import Optional


class DuesenberryError(Exception):
    """Base exception for all package errors."""
    pass


class ConfigError(DuesenberryError):
    """Invalid run configuration; carries the offending line when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelError(DuesenberryError):
    """Flow-model coefficients violate their bounds or domain."""
    pass


class SimulationError(DuesenberryError):
    """Ensemble could not be produced (explosions, bad initial coefficients)."""
    pass


class AggregationError(DuesenberryError):
    """Population aggregation received inconsistent or non-finite inputs."""
    pass


class PreferenceError(DuesenberryError):
    """Preference evaluation outside its domain."""
    pass


class PolicyError(DuesenberryError):
    """Policy construction received an invalid kernel or partition."""
    pass


class EquilibriumError(DuesenberryError):
    """Equilibrium construction failed a primitive constraint."""
    pass


class ScenarioError(DuesenberryError):
    """Scenario specification violates its invariants."""
    pass


class OracleError(DuesenberryError):
    """Statistical oracle inputs are unusable."""
    pass


class DataFileError(DuesenberryError):
    """Bundled data file missing or corrupt."""
    pass


class CalibrationError(DuesenberryError):
    """Decomposition inputs have mismatched noise dimensions or bad observables."""
    pass
