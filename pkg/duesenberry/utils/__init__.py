"""Shared plumbing for duesenberry-engine: errors, logging, run helpers, reports."""

from duesenberry.utils.errors import (
    AggregationError,
    CalibrationError,
    ConfigError,
    DataFileError,
    DuesenberryError,
    EquilibriumError,
    ModelError,
    OracleError,
    PolicyError,
    PreferenceError,
    ScenarioError,
    SimulationError,
)

__all__ = [
    "AggregationError",
    "CalibrationError",
    "ConfigError",
    "DataFileError",
    "DuesenberryError",
    "EquilibriumError",
    "ModelError",
    "OracleError",
    "PolicyError",
    "PreferenceError",
    "ScenarioError",
    "SimulationError",
]
