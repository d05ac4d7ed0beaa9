"""Shared report records for condition checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


def as_point_list(points) -> list[list[float]]:
    """Normalize witness points to plain nested float lists."""
    out = []
    for p in points:
        out.append([float(v) for v in np.atleast_1d(np.asarray(p, dtype=float))])
    return out


@dataclass
class CheckReport:
    """Outcome of a single condition check.

    ``condition`` names the check ("W", "MG", "W11", "A-value",
    "M-omega-G", "equivalences", "modulus-identities").  ``constant`` is
    the constant that was tested, or the supremum that was computed.
    ``worst_slack`` is the most negative margin observed; the check
    holds when every slack is nonnegative up to the caller's tolerance,
    so ``passed`` is ``worst_slack >= -tol``.  ``witness`` carries up to
    three points (y, z, x) realizing the worst slack.
    """

    condition: str
    constant: float
    worst_slack: float
    witness: list[list[float]] = field(default_factory=list)
    passed: bool = True
    warning: str | None = None
    details: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "condition": self.condition,
            "constant": float(self.constant),
            "worst_slack": float(self.worst_slack),
            "witness": as_point_list(self.witness),
            "passed": bool(self.passed),
        }
        if self.warning is not None:
            d["warning"] = self.warning
        if self.details is not None:
            d["details"] = self.details
        return d
