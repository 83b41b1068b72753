"""
Verification session tracking.

This module provides:
- Recording of verification suite outcomes with their key metrics
- A session report (dict) suitable for JSON serialization
- Export to JSON or CSV with the config hash and seed as a header
- A coloured console summary

Example usage:
    from duesenberry.utils.report_tracker import VerificationTracker

    tracker = VerificationTracker(config_hash=digest, seed=42)
    tracker.track_suite("clearing", passed=True, metrics={"max_residual": 3e-15})
    tracker.export_report("runs/verification.json")
    tracker.print_summary()
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from colorama import Fore, Style, init as colorama_init


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        number = float(value)
        if math.isnan(number):
            return None
        if math.isinf(number):
            return "inf" if number > 0 else "-inf"
        return number
    return value


def header_line(config_hash: str, seed: Optional[int]) -> str:
    """Comment line that heads every output file."""
    return f"# config_hash={config_hash} seed={seed}"


def write_json(payload: Dict[str, Any], filepath: Union[str, Path]) -> None:
    """UTF-8 JSON with sorted keys and a trailing newline."""
    with open(filepath, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(payload), f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def write_csv(
    frame: pd.DataFrame,
    filepath: Union[str, Path],
    config_hash: str,
    seed: Optional[int],
) -> None:
    """Comma-separated table behind a header comment line."""
    with open(filepath, "w", encoding="utf-8", newline="") as f:
        f.write(header_line(config_hash, seed) + "\n")
        frame.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")


class VerificationTracker:
    """Track verification suite outcomes across one run."""

    def __init__(self, config_hash: str = "unhashed", seed: Optional[int] = None):
        """
        Initialize tracker.

        Args:
            config_hash: Hash of the validated run config
            seed: Master seed of the run
        """
        self.config_hash = config_hash
        self.seed = seed
        self.suites: List[Dict[str, Any]] = []

    def track_suite(
        self,
        name: str,
        passed: bool,
        metrics: Optional[Dict[str, Any]] = None,
        details: Optional[Dict[str, Any]] = None,
    ) -> bool:
        """
        Record one suite outcome.

        Args:
            name: Suite name
            passed: Verdict
            metrics: Scalar metrics shown in CSV export and the summary
            details: Larger payloads kept in the JSON report only

        Returns:
            The verdict, for chaining
        """
        self.suites.append(
            {
                "suite": name,
                "passed": bool(passed),
                "metrics": to_jsonable(metrics or {}),
                "details": to_jsonable(details or {}),
            }
        )
        return bool(passed)

    @property
    def all_passed(self) -> bool:
        return all(suite["passed"] for suite in self.suites)

    def failed_suites(self) -> List[str]:
        return [suite["suite"] for suite in self.suites if not suite["passed"]]

    def get_session_report(self) -> Dict[str, Any]:
        """
        Generate the session report.

        Returns:
            Dictionary with header fields, per-suite outcomes and totals
        """
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "total_suites": len(self.suites),
            "passed_suites": sum(1 for suite in self.suites if suite["passed"]),
            "failed_suites": self.failed_suites(),
            "all_passed": self.all_passed,
            "suites": self.suites,
        }

    def export_report(self, filepath: Union[str, Path], format: str = "json") -> None:
        """
        Export session report to file.

        Args:
            filepath: Path to save report
            format: Export format ("json" or "csv")
        """
        if format == "json":
            write_json(self.get_session_report(), filepath)

        elif format == "csv":
            rows = []
            for suite in self.suites:
                row: Dict[str, Any] = {"suite": suite["suite"], "passed": suite["passed"]}
                for key, value in sorted(suite["metrics"].items()):
                    if not isinstance(value, (list, dict)):
                        row[key] = value
                rows.append(row)
            write_csv(pd.DataFrame(rows), filepath, self.config_hash, self.seed)

        else:
            raise ValueError(f"Unsupported format: {format}")

    def print_summary(self) -> None:
        """Print a coloured summary of the session."""
        colorama_init()
        report = self.get_session_report()

        print("\n" + "=" * 70)
        print(f"Verification  config={report['config_hash'][:12]}  seed={report['seed']}")
        print("=" * 70)
        for suite in self.suites:
            if suite["passed"]:
                mark = f"{Fore.GREEN}✓ PASS{Style.RESET_ALL}"
            else:
                mark = f"{Fore.RED}✗ FAIL{Style.RESET_ALL}"
            print(f"  {mark}  {suite['suite']}")
            for key, value in sorted(suite["metrics"].items()):
                if isinstance(value, float):
                    print(f"          {key}: {value:.3e}")
                elif not isinstance(value, (list, dict)):
                    print(f"          {key}: {value}")

        colour = Fore.GREEN if report["all_passed"] else Fore.RED
        print(
            f"\n{colour}{report['passed_suites']}/{report['total_suites']} suites passed"
            f"{Style.RESET_ALL}"
        )
        print("=" * 70 + "\n")
