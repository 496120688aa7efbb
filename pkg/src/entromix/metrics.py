"""Run metrics: aggregation, fixed-header CSV tables, structured logs.

Two artifact kinds leave a run: a comma-separated table with a fixed
header (one row per arm/seed result, machine-readable, mean and standard
deviation recomputable from the rows), and a JSON-lines log of timestamped
events for humans and scripts.  Plots are made elsewhere from these files.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RUN_TABLE_HEADER",
    "TRACE_HEADER",
    "CONFUSION_HEADER",
    "SeedResult",
    "RunMetrics",
    "mean_std",
    "write_run_table",
    "write_entropy_trace",
    "write_confusion",
    "StructuredLog",
]

RUN_TABLE_HEADER = ("arm", "seed", "accuracy", "mean", "std", "wall_clock_s", "config_hash", "status")
TRACE_HEADER = ("batch", "entropy", "accuracy", "drift", "flagged")
CONFUSION_HEADER = ("true_class", "pred_class", "count")

_log = logging.getLogger("entromix.metrics")


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation of a value list."""
    arr = np.asarray([v for v in values if math.isfinite(v)], dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std())


@dataclass
class SeedResult:
    """One (arm, seed) outcome."""

    arm: str
    seed: int
    accuracy: float
    wall_clock_s: float
    status: str = "ok"


@dataclass
class RunMetrics:
    """All results of one command invocation."""

    config_hash: str
    results: list[SeedResult] = field(default_factory=list)
    confusion: np.ndarray | None = None
    entropy_trace: list[float] | None = None

    def add(self, result: SeedResult) -> None:
        self.results.append(result)

    def arm_mean_std(self, arm: str) -> tuple[float, float]:
        return mean_std([r.accuracy for r in self.results if r.arm == arm and r.status == "ok"])

    def arms(self) -> list[str]:
        seen: list[str] = []
        for r in self.results:
            if r.arm not in seen:
                seen.append(r.arm)
        return seen


def write_run_table(path, metrics: RunMetrics) -> None:
    """Write the per-seed result table with the fixed header."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUN_TABLE_HEADER)
        for r in metrics.results:
            mean, std = metrics.arm_mean_std(r.arm)
            writer.writerow(
                [
                    r.arm,
                    r.seed,
                    f"{r.accuracy:.6f}",
                    f"{mean:.6f}",
                    f"{std:.6f}",
                    f"{r.wall_clock_s:.3f}",
                    metrics.config_hash,
                    r.status,
                ]
            )


def write_entropy_trace(path, report) -> None:
    """Write one row per adaptation batch from a StreamReport."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for i, row in enumerate(report.rows):
            writer.writerow(
                [
                    i,
                    f"{row.entropy:.6f}",
                    "" if row.accuracy is None else f"{row.accuracy:.6f}",
                    f"{row.drift:.6f}",
                    int(row.flagged),
                ]
            )


def write_confusion(path, matrix: np.ndarray) -> None:
    """Write a confusion matrix in long form (true, predicted, count)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CONFUSION_HEADER)
        k = matrix.shape[0]
        for true_class in range(k):
            for pred_class in range(k):
                writer.writerow([true_class, pred_class, int(matrix[true_class, pred_class])])


class StructuredLog:
    """Append-only JSON-lines event log, mirrored to the package logger."""

    def __init__(self, path=None):
        self._path = path
        self._fh = open(path, "a", encoding="utf-8") if path is not None else None

    def emit(self, event: str, **fields) -> None:
        record = {"ts": round(time.time(), 3), "event": event, **fields}
        line = json.dumps(record, sort_keys=True, default=str)
        if self._fh is not None:
            self._fh.write(line + "\n")
            self._fh.flush()
        _log.info("%s", line)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "StructuredLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
