"""
Run-level helpers shared by the compute modules and the CLI.

This module provides:
- Runtime settings read from the environment (thread count, log level)
- A timing context manager for pipeline stages
- Structured logging of pipeline steps
- Canonical hashing of validated configurations

Example usage:
    from duesenberry.utils.run_helpers import RunTimer, log_run_step

    with RunTimer("simulate") as timer:
        ensemble = simulate_flow(...)
    log_run_step("simulate", seconds=timer.elapsed, paths=ensemble.paths)
"""

import hashlib
import json
import logging
import time
from typing import Any, Dict, Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


# Configure logging
logger = logging.getLogger(__name__)


class RuntimeSettings(BaseSettings):
    """Process settings that never influence numerical output."""

    model_config = SettingsConfigDict(
        env_prefix="DUESENBERRY_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    threads: int = Field(default=1, ge=1, le=256)
    log_level: str = Field(default="INFO")
    log_file: Optional[str] = None


_settings: Optional[RuntimeSettings] = None


def get_settings() -> RuntimeSettings:
    """Get or create the process-wide runtime settings."""
    global _settings
    if _settings is None:
        _settings = RuntimeSettings()
    return _settings


def reset_settings() -> None:
    """Forget cached settings (tests change the environment)."""
    global _settings
    _settings = None


def config_hash(payload: Dict[str, Any]) -> str:
    """
    SHA-256 of the canonical JSON form of a config dump.

    Args:
        payload: JSON-serializable mapping (a validated config's model_dump)

    Returns:
        Hex digest, stable across runs and platforms
    """
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def log_run_step(step: str, **fields: Any) -> None:
    """
    Log one pipeline stage as a structured record.

    The fields travel as ``extra`` so the JSON run log carries them as keys.
    """
    logger.info(f"step {step}", extra={"step": step, **fields})


class RunTimer:
    """
    Context manager timing one pipeline stage.

    Example:
        with RunTimer("build_market") as timer:
            market = build_market(inputs, ensemble)
        print(f"market built in {timer.elapsed:.2f}s")
    """

    def __init__(self, label: str = "stage"):
        self.label = label
        self.start_time: Optional[float] = None
        self.elapsed: Optional[float] = None

    def __enter__(self) -> "RunTimer":
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        assert self.start_time is not None
        self.elapsed = time.perf_counter() - self.start_time
        logger.debug(f"{self.label} took {self.elapsed:.3f}s")
