"""Scaled harmonic-oscillator eigenfunctions for the transverse direction.

The transverse operator is ``-1/2 d^2/dy^2 + y^2 / (2 eps^2)``; its n-th
normalized eigenfunction is ``eps**-0.25 * h_n(y / sqrt(eps))`` where ``h_n``
is the n-th Hermite function, with eigenvalue ``(n + 1/2) / eps``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "N_MAX",
    "HermiteMode",
    "hermite_functions",
    "mode_eval",
    "mode_energy",
    "transverse_cutoff",
    "eigen_residual",
    "gram_matrix",
]

N_MAX = 12


def hermite_functions(nmax: int, x):
    """Normalized Hermite functions ``h_0 .. h_nmax`` at ``x``.

    Uses the three-term recurrence on the normalized functions, so nothing
    overflows even where ``H_n(x)`` alone would. Output has shape
    ``(nmax + 1,) + x.shape``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = np.pi**-0.25 * np.exp(-0.5 * x * x)
    if nmax >= 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for k in range(1, nmax):
        out[k + 1] = np.sqrt(2.0 / (k + 1)) * x * out[k] - np.sqrt(k / (k + 1)) * out[k - 1]
    return out


def _check(n: int, epsilon: float, n_max: int) -> None:
    if n < 0:
        raise ValueError(f"band index must be nonnegative, got {n}")
    if n > n_max:
        raise ValueError(f"band {n} exceeds the stable recurrence range n_max={n_max}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")


def mode_eval(n: int, epsilon: float, y, n_max: int = N_MAX):
    """Evaluate the normalized transverse eigenfunction of band ``n`` at ``y``."""
    _check(n, epsilon, n_max)
    xi = np.asarray(y, dtype=float) / np.sqrt(epsilon)
    return epsilon**-0.25 * hermite_functions(n, xi)[n]


def mode_energy(n: int, epsilon: float) -> float:
    """Transverse energy ``(n + 1/2) / epsilon``."""
    if n < 0 or not epsilon > 0:
        raise ValueError("need n >= 0 and epsilon > 0")
    return (n + 0.5) / epsilon


def transverse_cutoff(n: int, epsilon: float) -> float:
    """Half-width beyond which the band-``n`` mode is below ~1e-14."""
    return np.sqrt(epsilon) * (2.0 * np.sqrt(2 * n + 1) + 6.0)


@dataclass(frozen=True)
class HermiteMode:
    n: int
    epsilon: float

    def __post_init__(self):
        _check(self.n, self.epsilon, N_MAX)

    def __call__(self, y):
        return mode_eval(self.n, self.epsilon, y)

    @property
    def energy(self) -> float:
        return mode_energy(self.n, self.epsilon)


# centered second-derivative stencils (offsets -k..k)
_STENCILS = {
    2: np.array([1.0, -2.0, 1.0]),
    4: np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0,
    6: np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]) / 180.0,
}


def eigen_residual(n: int, epsilon: float, y, order: int = 2) -> float:
    """L2 norm of ``(H_perp - E_n/eps) Phi_n`` with a centered-difference Laplacian.

    ``y`` must be a uniform grid. The residual is evaluated on interior nodes
    where the full stencil fits.

    Raises
    ------
    ValueError
        If the grid does not span 8 standard deviations of the mode or has
        fewer than 16 points per local oscillation.
    """
    y = np.asarray(y, dtype=float)
    h = y[1] - y[0]
    if not np.allclose(np.diff(y), h, rtol=1e-9, atol=0.0):
        raise ValueError("eigen_residual needs a uniform grid")
    sigma = np.sqrt(epsilon * (n + 0.5))
    if min(-y[0], y[-1]) < 4.0 * sigma:
        raise ValueError(
            f"grid too coarse: covers [{y[0]:.3g}, {y[-1]:.3g}], needs +-{4 * sigma:.3g} (8 std devs)"
        )
    wavelength = 2.0 * np.pi * np.sqrt(epsilon) / np.sqrt(2 * n + 1)
    if h > wavelength / 16.0:
        raise ValueError(
            f"grid too coarse: spacing {h:.3g} exceeds 1/16 of the local wavelength {wavelength:.3g}"
        )
    if order not in _STENCILS:
        raise ValueError(f"unsupported stencil order {order}")
    c = _STENCILS[order]
    k = len(c) // 2
    phi = mode_eval(n, epsilon, y)
    lap = np.zeros(len(y) - 2 * k)
    for i, ci in enumerate(c):
        lap += ci * phi[i : len(y) - 2 * k + i]
    lap /= h * h
    inner = phi[k : len(y) - k]
    yi = y[k : len(y) - k]
    r = -0.5 * lap + 0.5 * yi**2 / epsilon**2 * inner - mode_energy(n, epsilon) * inner
    return float(np.sqrt(np.sum(np.abs(r) ** 2) * h))


def gram_matrix(nmax: int, epsilon: float, nodes: int = 64):
    """Overlaps ``<Phi_m, Phi_n>`` for ``m, n <= nmax`` by Gauss-Hermite quadrature."""
    xi, w = np.polynomial.hermite.hermgauss(nodes)
    y = np.sqrt(epsilon) * xi
    phi = np.array([mode_eval(m, epsilon, y) for m in range(nmax + 1)])
    # divide out the Gauss-Hermite weight exp(-xi^2); dy = sqrt(eps) dxi
    wy = w * np.exp(xi**2) * np.sqrt(epsilon)
    return (phi * wy) @ phi.T
