"""Verdict records shared by the catalog validators and the diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RunReport:
    """One check.  Passes if |z| <= z_max (when an oracle and SE exist) or
    metric <= threshold (when a metric is given); both must hold if both
    are present."""

    check: str
    estimate: float = float("nan")
    se: float = float("nan")
    oracle: float = float("nan")
    metric: float | None = None
    threshold: float | None = None
    z_max: float = 3.0
    metadata: dict = field(default_factory=dict)
    note: str = ""
    forced: bool | None = None

    @property
    def z(self) -> float:
        if not np.isfinite(self.oracle) or not np.isfinite(self.estimate):
            return float("nan")
        if not self.se > 0:
            return 0.0 if self.estimate == self.oracle else float("inf")
        return (self.estimate - self.oracle) / self.se

    @property
    def passed(self) -> bool:
        if self.forced is not None:
            return bool(self.forced)
        ok = True
        has_any = False
        if np.isfinite(self.oracle):
            has_any = True
            ok &= bool(abs(self.z) <= self.z_max)
        if self.metric is not None and self.threshold is not None:
            has_any = True
            ok &= bool(self.metric <= self.threshold)
        return ok and has_any

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def line(self) -> str:
        parts = [f"{self.verdict} {self.check}:"]
        if np.isfinite(self.estimate):
            parts.append(f"est={self.estimate:.6g}")
        if np.isfinite(self.se):
            parts.append(f"se={self.se:.3g}")
        if np.isfinite(self.oracle):
            parts.append(f"oracle={self.oracle:.6g} z={self.z:+.2f}")
        if self.metric is not None:
            parts.append(f"metric={self.metric:.4g}")
            if self.threshold is not None:
                parts.append(f"threshold={self.threshold:.4g}")
        if self.note:
            parts.append(f"({self.note})")
        return " ".join(parts)

    def row(self) -> dict:
        return {
            "check": self.check,
            "estimate": self.estimate,
            "se": self.se,
            "oracle": self.oracle,
            "z": self.z,
            "metric": "" if self.metric is None else self.metric,
            "threshold": "" if self.threshold is None else self.threshold,
            "verdict": self.verdict,
            "note": self.note,
        }


def weighted_slope(t, mean, se) -> tuple[float, float]:
    """Weighted least-squares slope of ``mean`` on ``t`` and its standard error.

    Points are weighted by 1/se^2 and treated as independent; points with
    zero SE (deterministic values such as a t = 0 start) are dropped.
    """
    t, mean, se = (np.asarray(v, float) for v in (t, mean, se))
    keep = se > 0
    if keep.sum() < 2:
        return 0.0, 0.0
    t, mean, w = t[keep], mean[keep], 1.0 / se[keep] ** 2
    tb = np.sum(w * t) / np.sum(w)
    sxx = np.sum(w * (t - tb) ** 2)
    slope = float(np.sum(w * (t - tb) * mean) / sxx)
    return slope, float(1.0 / np.sqrt(sxx))
