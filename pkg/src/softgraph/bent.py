"""Smoothly bent two-edge curve, its tubular geometry and the effective 1D dynamics.

The curvature is ``k_delta(s) = (theta / delta) k(s / delta)`` with ``k`` an
even plateau bump of unit integral supported in ``|s| < 3/4``. The curve
turns by ``theta`` over ``|s| < delta`` and is straight elsewhere; as
``delta -> 0`` it collapses onto two rays meeting at opening angle
``pi - theta``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp
from scipy.spatial import cKDTree

from .cutoff import smoothstep_derivs

__all__ = [
    "BUMP_INTEGRAL",
    "CurvatureProfile",
    "curvature_eval",
    "Curve2D",
    "reconstruct_curve",
    "curve_distance",
    "plane_to_tube",
    "jacobian",
    "geometric_potential",
    "effective_potential",
    "LineGrid",
    "staggered_difference",
    "kinetic_matrix",
    "effective_hamiltonian",
    "rational_stepper",
    "effective_propagate",
    "ground_state_energy",
    "derivative_bounds",
]

# raw plateau bump: 1 on |s| < 1/2, smoothstep down to 0 at |s| = 3/4.
# S(x) + S(1 - x) = 1 makes the transition integrate to half its width,
# so the raw integral is 2 * (1/2 + 1/8).
BUMP_INTEGRAL = 1.25
_EDGE_IN, _EDGE_OUT = 0.5, 0.75


def _base_bump(x):
    """Normalized base bump ``k`` and its first two derivatives."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    w = _EDGE_OUT - _EDGE_IN
    S, S1, S2 = smoothstep_derivs((_EDGE_OUT - a) / w)
    sgn = np.sign(x)
    k = S / BUMP_INTEGRAL
    k1 = -sgn * S1 / w / BUMP_INTEGRAL
    k2 = S2 / w**2 / BUMP_INTEGRAL
    return k, k1, k2


@dataclass(frozen=True)
class CurvatureProfile:
    """Curvature family ``sign * (theta / delta) k(s / delta)``.

    ``sign = -1`` bends the other way; it is exposed for experiments only.
    """

    theta: float
    delta: float
    sign: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.theta < np.pi:
            raise ValueError(f"turning angle must lie in [0, pi), got {self.theta}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    @property
    def kmax(self) -> float:
        return self.theta / self.delta / BUMP_INTEGRAL

    @property
    def support(self) -> tuple[float, float]:
        return (-_EDGE_OUT * self.delta, _EDGE_OUT * self.delta)


def curvature_eval(p: CurvatureProfile, s):
    """Return ``(k, k', k'')`` of ``k_delta`` at ``s``."""
    s = np.asarray(s, dtype=float)
    k, k1, k2 = _base_bump(s / p.delta)
    c = p.sign * p.theta
    return c * k / p.delta, c * k1 / p.delta**2, c * k2 / p.delta**3


@dataclass
class Curve2D:
    """Unit-speed planar curve sampled at arc lengths ``s``.

    Straight for ``s < -delta`` (along +x, ending at ``(-delta, 0)``) and for
    ``s > delta``; the bend is integrated in between.
    """

    profile: CurvatureProfile
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    angle: np.ndarray
    _sol: object = None

    def _state(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        d = self.profile.delta
        out = np.empty((3, s.size))
        lo = s <= -d
        hi = s >= d
        mid = ~(lo | hi)
        out[0, lo] = 0.0
        out[1, lo] = s[lo]
        out[2, lo] = 0.0
        if np.any(mid):
            out[:, mid] = self._sol.sol(s[mid])
        end = self._sol.sol(d)
        out[0, hi] = end[0]
        out[1, hi] = end[1] + (s[hi] - d) * np.cos(end[0])
        out[2, hi] = end[2] + (s[hi] - d) * np.sin(end[0])
        return out

    def position(self, s) -> np.ndarray:
        st = self._state(s)
        return np.stack([st[1], st[2]], axis=-1)

    def tangent_angle(self, s) -> np.ndarray:
        return self._state(s)[0]

    def normal(self, s) -> np.ndarray:
        """Unit normal ``n`` with ``n' = k t``, so the area factor is ``1 + u k``."""
        a = self.tangent_angle(s)
        return np.stack([np.sin(a), -np.cos(a)], axis=-1)

    def to_plane(self, s, u) -> np.ndarray:
        """Tubular coordinates ``(s, u)`` to plane points ``zeta(s) + u n(s)``."""
        s = np.asarray(s, dtype=float)
        u = np.asarray(u, dtype=float)
        sb, ub = np.broadcast_arrays(s, u)
        st = self._state(sb.ravel())
        px = st[1] + ub.ravel() * np.sin(st[0])
        py = st[2] - ub.ravel() * np.cos(st[0])
        return np.stack([px, py], axis=-1).reshape(sb.shape + (2,))

    @property
    def turning_angle(self) -> float:
        d = self.profile.delta
        return float(self._sol.sol(d)[0] - self._sol.sol(-d)[0])

    def limit_graph_points(self, s):
        """Points of the limiting two-ray graph at signed arc length ``s`` (vertex at the origin)."""
        s = np.asarray(s, dtype=float)
        a = self.profile.sign * self.profile.theta
        out = np.where(s[..., None] < 0, np.stack([s, 0 * s], -1), s[..., None] * np.array([np.cos(a), np.sin(a)]))
        return out

    def to_csv(self, path) -> None:
        k, _, _ = curvature_eval(self.profile, self.s)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "x", "y", "theta", "k"])
            for row in zip(self.s, self.x, self.y, self.angle, k):
                w.writerow([repr(float(v)) for v in row])


def reconstruct_curve(p: CurvatureProfile, s=None, rtol: float = 1e-13) -> Curve2D:
    """Integrate ``theta' = k``, ``zeta' = (cos theta, sin theta)`` across the bend.

    ``s`` gives the output samples (default: 20001 points on ``[-3 delta, 3 delta]``).
    """
    d = p.delta

    def rhs(s, z):
        k = curvature_eval(p, s)[0]
        return [k, np.cos(z[0]), np.sin(z[0])]

    # every bump edge is a breakpoint of smoothness; keep steps well inside
    sol = solve_ivp(rhs, (-d, d), [0.0, -d, 0.0], method="DOP853", rtol=rtol, atol=1e-15 * max(1.0, d),
                    dense_output=True, max_step=d / 64)
    if s is None:
        s = np.linspace(-3 * d, 3 * d, 20001)
    s = np.asarray(s, dtype=float)
    c = Curve2D(p, s, None, None, None, sol)
    st = c._state(s)
    c.angle, c.x, c.y = st[0], st[1], st[2]
    return c


def _foot_points(curve: Curve2D, Q: np.ndarray, s_range, samples: int) -> np.ndarray:
    # nearest dense sample by KD-tree, then Newton on (zeta(s) - q) . zeta'(s) = 0
    if s_range is None:
        R = np.max(np.abs(Q)) + 2 * curve.profile.delta + 1.0
        s_range = (-R, R)
    ss = np.linspace(*s_range, samples)
    tree = cKDTree(curve.position(ss))
    _, idx = tree.query(Q)
    s = ss[idx]
    for _ in range(6):
        st = curve._state(s)
        a = st[0]
        k = curvature_eval(curve.profile, s)[0]
        rx = st[1] - Q[:, 0]
        ry = st[2] - Q[:, 1]
        g = rx * np.cos(a) + ry * np.sin(a)
        dg = 1.0 + k * (-rx * np.sin(a) + ry * np.cos(a))
        step = np.where(np.abs(dg) > 1e-3, g / dg, g)
        s = np.clip(s - step, s_range[0], s_range[1])
    return s


def plane_to_tube(curve: Curve2D, q, s_range=None, samples: int = 20001):
    """Tubular coordinates ``(s, u)`` of plane points ``q[..., 2]``.

    ``|u|`` is the distance to the curve; the pair is a valid coordinate only
    inside the in-radius.
    """
    q = np.asarray(q, dtype=float)
    Q = q.reshape(-1, 2)
    s = _foot_points(curve, Q, s_range, samples)
    st = curve._state(s)
    u = (Q[:, 0] - st[1]) * np.sin(st[0]) - (Q[:, 1] - st[2]) * np.cos(st[0])
    return s.reshape(q.shape[:-1]), u.reshape(q.shape[:-1])


def curve_distance(curve: Curve2D, q, s_range=None, samples: int = 20001) -> np.ndarray:
    """Distance from plane points ``q[..., 2]`` to the smooth curve."""
    q = np.asarray(q, dtype=float)
    Q = q.reshape(-1, 2)
    s = _foot_points(curve, Q, s_range, samples)
    pos = curve.position(s)
    return np.hypot(pos[:, 0] - Q[:, 0], pos[:, 1] - Q[:, 1]).reshape(q.shape[:-1])


def jacobian(p: CurvatureProfile, s, u):
    """Area factor ``1 + u k_delta(s)`` of tubular coordinates.

    Raises
    ------
    ValueError
        If ``|u k_delta(s)| >= 1`` anywhere (outside the radius of curvature).
    """
    k = curvature_eval(p, s)[0]
    uk = np.asarray(u, dtype=float) * k
    if np.any(np.abs(uk) >= 1.0):
        raise ValueError(f"degenerate tubular coordinates: max |u k| = {np.max(np.abs(uk)):.3g} >= 1")
    return 1.0 + uk


def geometric_potential(p: CurvatureProfile, s, u, exact: bool = False):
    """Curvature-induced potential for ``-1/2 Laplacian`` in tubular coordinates.

    With ``J = 1 + u k`` the default evaluates
    ``1/2 [-k^2 / (4 J^2) + u k'' / (2 J^2) - 5 u^2 k'^2 / (4 J^2)]``.
    ``exact=True`` gives the potential produced by conjugating the Laplacian
    with ``J^(1/2)``, whose last two terms carry ``J^3`` and ``J^4``. Both
    agree at ``u = 0``, where they equal ``-k^2 / 8``.
    """
    J = jacobian(p, s, u)
    k, k1, k2 = curvature_eval(p, s)
    u = np.asarray(u, dtype=float)
    if exact:
        return 0.5 * (-(k**2) / (4 * J**2) + u * k2 / (2 * J**3) - 1.25 * u**2 * k1**2 / J**4)
    return 0.5 * (-(k**2) / (4 * J**2) + u * k2 / (2 * J**2) - 1.25 * u**2 * k1**2 / J**2)


def effective_potential(p: CurvatureProfile, s):
    """``-k_delta(s)^2 / 8``, the potential of the effective line operator."""
    return -curvature_eval(p, s)[0] ** 2 / 8.0


# ---------------------------------------------------------------- line operators


@dataclass(frozen=True)
class LineGrid:
    """Uniform grid of interior nodes on ``(s0, s1)``; the wavefunction vanishes at both ends."""

    s0: float
    s1: float
    n: int

    @property
    def h(self) -> float:
        return (self.s1 - self.s0) / (self.n + 1)

    @property
    def s(self) -> np.ndarray:
        return self.s0 + self.h * np.arange(1, self.n + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return self.s0 + self.h * (np.arange(self.n + 1) + 0.5)


def staggered_difference(grid: LineGrid, order: int = 2) -> sp.csr_matrix:
    """First derivative from the nodes to the ``n + 1`` midpoints, zero beyond both ends.

    ``order=4`` uses the staggered stencil ``(1, -27, 27, -1) / 24h``.
    """
    n = grid.n
    if order == 2:
        offsets, weights = (0, 1), (-1.0, 1.0)
    elif order == 4:
        offsets, weights = (-1, 0, 1, 2), (1 / 24, -27 / 24, 27 / 24, -1 / 24)
    else:
        raise ValueError(f"unsupported stencil order {order}")
    # midpoint j sits between padded nodes j and j + 1; interior node i is padded node i + 1
    diags = [np.full(n + 1, w / grid.h) for w in weights]
    D = sp.diags(diags, [o - 1 for o in offsets], shape=(n + 1, n), format="csr")
    return D


def kinetic_matrix(grid: LineGrid, coeff=None, order: int = 2) -> sp.csr_matrix:
    """Conservative discretization ``1/2 D^T c D`` of ``-1/2 d/ds (c(s) d/ds)`` with Dirichlet ends.

    ``coeff`` holds ``c`` at the ``n + 1`` cell midpoints (default 1); ``D`` is
    :func:`staggered_difference` of the given order. The result is symmetric.
    """
    c = np.ones(grid.n + 1) if coeff is None else np.asarray(coeff, dtype=float)
    D = staggered_difference(grid, order)
    return (0.5 * D.T @ sp.diags(c) @ D).tocsr()


def effective_hamiltonian(p: CurvatureProfile, grid: LineGrid, order: int = 2) -> sp.csr_matrix:
    return (kinetic_matrix(grid, order=order) + sp.diags(effective_potential(p, grid.s))).tocsr()


# roots of 1 - z/2 + z^2/12, the denominator of the (2,2) Pade approximant of exp(z)
_PADE4_ROOTS = (3.0 + 1j * np.sqrt(3.0), 3.0 - 1j * np.sqrt(3.0))


def rational_stepper(H, dt: float, scheme: str = "cn"):
    """Unitary one-step map approximating ``exp(-i dt H)`` for a sparse symmetric ``H``.

    ``"cn"`` is the (1,1) Pade approximant (second order); ``"pade4"`` is the
    (2,2) approximant, applied as two Cayley-like factors with complex shifts
    (fourth order, two sparse solves per step).
    """
    H = sp.csc_matrix(H)
    eye = sp.identity(H.shape[0], format="csc")
    z = -1j * dt * H
    if scheme == "cn":
        roots = (2.0,)
    elif scheme == "pade4":
        roots = _PADE4_ROOTS
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    factors = [(spla.splu((eye - z / r).tocsc()), (eye + z / r).tocsr()) for r in roots]

    def step(v):
        for lu, B in factors:
            v = lu.solve(B @ v)
        return v

    return step


def effective_propagate(
    p: CurvatureProfile,
    f,
    T: float,
    grid: LineGrid | None = None,
    dt: float = 1e-3,
    method: str = "spectral",
    potential=None,
    times=None,
    order: int = 2,
):
    """Evolve ``f`` under ``-1/2 d^2/ds^2 - k_delta^2 / 8`` up to ``T``.

    ``method="spectral"`` uses Strang splitting with an FFT kinetic step on
    the periodic box spanned by ``grid``; ``method="cn"`` (Crank-Nicolson) and
    ``"pade4"`` (see :func:`rational_stepper`) act on the conservative finite-difference operator with Dirichlet ends
    (the discretization shared with the tube propagator, stencil ``order``
    2 or 4). ``potential``
    overrides ``-k^2/8`` with samples on the grid. ``times`` lists output
    times (multiples of ``dt``); default is ``[T]``.

    Returns
    -------
    s, values : ndarray
        Grid nodes and an array of shape ``(len(times), n)``.
    """
    if grid is None:
        grid = LineGrid(-20.0, 20.0, 4095)
    s = grid.s
    u = f(s).astype(complex) if callable(f) else np.asarray(f, dtype=complex).copy()
    V = effective_potential(p, s) if potential is None else np.asarray(potential, dtype=float)
    times = [T] if times is None else list(times)
    steps = [int(round(t / dt)) for t in times]
    if any(abs(k * dt - t) > 1e-9 * max(1.0, t) for k, t in zip(steps, times)):
        raise ValueError("output times must be multiples of dt")
    out = []
    k = 0
    if method == "spectral":
        kk = 2 * np.pi * sfft.fftfreq(grid.n, grid.h)
        kin = np.exp(-0.5j * dt * kk**2)
        half = np.exp(-0.5j * dt * V)
        for target in steps:
            while k < target:
                u = half * sfft.ifft(kin * sfft.fft(half * u))
                k += 1
            out.append(u.copy())
    elif method in ("cn", "pade4"):
        H = kinetic_matrix(grid, order=order) + sp.diags(V)
        step = rational_stepper(H, dt, method)
        for target in steps:
            while k < target:
                u = step(u)
                k += 1
            out.append(u.copy())
    else:
        raise ValueError(f"unknown method {method!r}")
    return s, np.array(out)


def ground_state_energy(p: CurvatureProfile, grid: LineGrid | None = None) -> float:
    """Lowest eigenvalue of the effective line operator on a Dirichlet box.

    The default grid spans ``40 delta`` either side with ``delta / 40`` spacing,
    enough to hold the bound state whose decay length shrinks with ``delta``.
    """
    if grid is None:
        L = 40.0 * p.delta
        grid = LineGrid(-L, L, int(round(2 * L / (p.delta / 40.0))) - 1)
    H = effective_hamiltonian(p, grid)
    vals = spla.eigsh(H.tocsc(), k=1, sigma=-(p.kmax**2) / 8.0 - 1.0, which="LM", return_eigenvectors=False)
    return float(vals[0])


def derivative_bounds(s, f0, ft, t: float, V):
    """Both sides of the first- and second-derivative growth inequalities.

    Derivatives are spectral on the periodic grid ``s``. Returns a dict with
    ``lhs1, rhs1, lhs2, rhs2`` where
    ``|f_t'| <= |f'| + |t| |V'|_inf |f|`` and
    ``|f_t''| <= |f''| + |t| (2 |V'|_inf |f'| + |V''|_inf |f|)``.
    """
    h = s[1] - s[0]
    k = 2 * np.pi * sfft.fftfreq(len(s), h)

    def d(u, order):
        return sfft.ifft((1j * k) ** order * sfft.fft(u))

    def nrm(u):
        return float(np.sqrt(np.sum(np.abs(u) ** 2) * h))

    V = np.asarray(V, dtype=complex)
    v1 = np.max(np.abs(d(V, 1)))
    v2 = np.max(np.abs(d(V, 2)))
    return {
        "lhs1": nrm(d(ft, 1)),
        "rhs1": nrm(d(f0, 1)) + abs(t) * v1 * nrm(f0),
        "lhs2": nrm(d(ft, 2)),
        "rhs2": nrm(d(f0, 2)) + abs(t) * (2 * v1 * nrm(d(f0, 1)) + v2 * nrm(f0)),
    }
