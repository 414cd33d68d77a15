"""Smooth compactly supported functions built from the exp(-1/x) mollifier.

These realize the test functions and cutoffs used throughout the package:
longitudinal profiles ``f``, pairing functions ``chi`` and the curvature bump.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["smoothstep", "smoothstep_derivs", "Cutoff", "WindowedGaussian", "cutoff_factory"]

# below this the logistic argument underflows to an exact 0/1 anyway
_CLIP = 1e-3


def _logistic_arg(x):
    x = np.clip(x, _CLIP, 1.0 - _CLIP)
    return 1.0 / (1.0 - x) - 1.0 / x, x


def smoothstep(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, all derivatives vanish at both ends.

    Equal to ``a(x) / (a(x) + a(1 - x))`` with ``a(x) = exp(-1/x)``, evaluated
    in logistic form to avoid overflow.
    """
    x = np.asarray(x, dtype=float)
    g, _ = _logistic_arg(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * g))
    return np.where(x <= 0.0, 0.0, np.where(x >= 1.0, 1.0, out))


def smoothstep_derivs(x):
    """Return ``(S, S', S'')`` of :func:`smoothstep`."""
    x = np.asarray(x, dtype=float)
    g, xc = _logistic_arg(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * g))
    # sigma' = sigma (1 - sigma), written to stay finite for large |g|
    e = np.exp(-np.abs(g))
    ds = e / (1.0 + e) ** 2
    d2s = ds * (1.0 - 2.0 * s)
    g1 = 1.0 / (1.0 - xc) ** 2 + 1.0 / xc**2
    g2 = 2.0 / (1.0 - xc) ** 3 - 2.0 / xc**3
    s1 = ds * g1
    s2 = d2s * g1**2 + ds * g2
    inside = (x > 0.0) & (x < 1.0)
    return (
        np.where(x <= 0.0, 0.0, np.where(x >= 1.0, 1.0, s)),
        np.where(inside, s1, 0.0),
        np.where(inside, s2, 0.0),
    )


@dataclass(frozen=True)
class Cutoff:
    """A smooth function supported in ``[a, b]``.

    ``kind="bump"`` is the standard mollifier ``exp(1 - 1/(1 - r^2))`` (peak 1);
    ``kind="plateau"`` equals 1 on the middle half of the interval.
    """

    a: float
    b: float
    kind: str = "bump"

    @property
    def support(self) -> tuple[float, float]:
        return (self.a, self.b)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        mid = 0.5 * (self.a + self.b)
        half = 0.5 * (self.b - self.a)
        r = np.abs(x - mid) / half
        if self.kind == "bump":
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                val = np.exp(1.0 - 1.0 / (1.0 - r**2))
            return np.where(r < 1.0, val, 0.0)
        return np.where(r <= 0.5, 1.0, smoothstep(2.0 * (1.0 - r)))


def cutoff_factory(a: float, b: float, kind: str = "bump") -> Cutoff:
    """Build a C-infinity cutoff supported in ``[a, b]``.

    Raises
    ------
    ValueError
        If ``a >= b`` or ``kind`` is not ``"bump"`` or ``"plateau"``.
    """
    if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
        raise ValueError(f"degenerate cutoff interval [{a}, {b}]")
    if kind not in ("bump", "plateau"):
        raise ValueError(f"unknown cutoff kind {kind!r}")
    return Cutoff(float(a), float(b), kind)


@dataclass(frozen=True)
class WindowedGaussian:
    """Gaussian ``exp(-(x - center)^2 / (2 sigma^2))`` times a plateau cutoff.

    The window is flat over ``center +- halfwidth / 2`` and vanishes beyond
    ``center +- halfwidth``, so the function keeps compact support while its
    Fourier transform decays like the Gaussian's down to the window level.
    """

    center: float
    sigma: float
    halfwidth: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.halfwidth > 0):
            raise ValueError("sigma and halfwidth must be positive")

    @property
    def support(self) -> tuple[float, float]:
        return (self.center - self.halfwidth, self.center + self.halfwidth)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        win = Cutoff(*self.support, kind="plateau")
        return np.exp(-0.5 * ((x - self.center) / self.sigma) ** 2) * win(x)
