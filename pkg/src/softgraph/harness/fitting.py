"""Least-squares rate fits on logarithmic data."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

__all__ = ["RateFit", "fit_rate", "strictly_decreasing"]


@dataclass(frozen=True)
class RateFit:
    """``log y = intercept + slope * u`` with ``u = log x`` (power model) or ``u = 1/x`` (exponential model)."""

    slope: float
    intercept: float
    r_squared: float
    model: str = "power"
    npoints: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def fit_rate(xs, ys, model: str = "power") -> RateFit:
    """Fit ``y ~ C x^p`` (``model="power"``) or ``y ~ C exp(p / x)`` (``model="exponential"``).

    Raises
    ------
    ValueError
        With fewer than 3 points, mismatched lengths or nonpositive data.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D arrays of equal length")
    if len(x) < 3:
        raise ValueError(f"need at least 3 points, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("data must be finite")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("rate fits need strictly positive data")
    if model == "power":
        u = np.log(x)
    elif model == "exponential":
        u = 1.0 / x
    else:
        raise ValueError(f"unknown model {model!r}")
    v = np.log(y)
    (slope, intercept), res, *_ = np.polyfit(u, v, 1, full=True)
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    ss_res = float(res[0]) if len(res) else 0.0
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), float(r2), model, len(x))


def strictly_decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.isfinite(v)) and np.all(np.diff(v) < 0))
