"""Verdicts shared by the trajectory, pointwise and value-function checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = ["CheckReport", "HOLDS", "FALSIFIED", "to_jsonable", "dumps"]

HOLDS = "HoldsOnSamples"
FALSIFIED = "Falsified"


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays and dataclass-like objects to JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if v != v:
            return "nan"
        if v in (float("inf"), float("-inf")):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def dumps(obj: Any) -> str:
    """Deterministic JSON text: sorted keys, fixed separators, trailing newline."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


@dataclass
class CheckReport:
    """Outcome of checking an inequality over a finite sample set.

    ``worst_margin`` is the smallest raw slack ``rhs - lhs`` seen; the
    verdict is ``Falsified`` when some sample violates the inequality by
    more than its tolerance, in which case ``witness`` holds the data needed
    to replay it.
    """

    verdict: str
    worst_margin: float
    counts: dict = field(default_factory=dict)
    witness: dict | None = None
    notes: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.verdict == HOLDS

    @property
    def falsified(self) -> bool:
        return self.verdict == FALSIFIED

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "worst_margin": self.worst_margin,
            "counts": self.counts,
            "witness": self.witness,
            "notes": list(self.notes),
            "extras": self.extras,
        }


class MarginTracker:
    """Running min-margin reduction with first-violation witness capture."""

    def __init__(self):
        self.worst = float("inf")
        self.worst_info: dict | None = None
        self.violation: dict | None = None
        self.violation_excess = 0.0

    def update(self, margin: float, tol: float, info_fn) -> None:
        if margin < self.worst:
            self.worst = margin
            self.worst_info = None
        excess = -(margin + tol)
        if excess > self.violation_excess:
            self.violation_excess = excess
            self.violation = info_fn()

    def merge(self, other: "MarginTracker") -> None:
        if other.worst < self.worst:
            self.worst = other.worst
        if other.violation_excess > self.violation_excess:
            self.violation_excess = other.violation_excess
            self.violation = other.violation

    def report(self, counts: dict, notes=None, extras=None) -> CheckReport:
        verdict = FALSIFIED if self.violation is not None else HOLDS
        worst = self.worst if self.worst != float("inf") else 0.0
        return CheckReport(verdict, worst, counts, self.violation, list(notes or []), dict(extras or {}))
