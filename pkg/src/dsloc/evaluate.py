from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_THRESHOLDS = (10.0, 30.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0)
FAILURE_M = 300.0
CURVE_SCHEMA = "dsloc.curve/1"


def accuracy_curve(errors: Iterable[float], thresholds: Sequence[float] = DEFAULT_THRESHOLDS):
    """Fraction of queries with error <= t for each threshold t.

    Missing predictions should be passed as ``inf``; they count as failures.
    """
    errors = np.asarray([math.inf if e is None else e for e in errors], dtype=float)
    if errors.size == 0:
        raise ValueError("no reports to evaluate")
    thresholds = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(thresholds) <= 0):
        raise ValueError("thresholds must be strictly ascending")
    return [float(np.mean(errors <= t)) for t in thresholds]


def evaluate_reports(reports: Sequence[dict], thresholds: Sequence[float] = DEFAULT_THRESHOLDS):
    """Per-method accuracy curves from report dicts carrying ``method`` and ``error_m``."""
    if not reports:
        raise ValueError("no reports to evaluate")
    by_method: dict[str, list[float]] = {}
    for rep in reports:
        err = rep.get("error_m")
        by_method.setdefault(rep["method"], []).append(math.inf if err is None else err)
    return {m: accuracy_curve(errs, thresholds) for m, errs in sorted(by_method.items())}


def write_curves_csv(path, curves: dict[str, list[float]], thresholds=DEFAULT_THRESHOLDS) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["schema_version", "method", "threshold_m", "accuracy"])
        for method, acc in curves.items():
            for t, a in zip(thresholds, acc):
                writer.writerow([CURVE_SCHEMA, method, repr(float(t)), repr(a)])
