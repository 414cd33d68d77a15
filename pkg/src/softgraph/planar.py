"""Two-dimensional propagation under ``-1/2 Laplacian + d^2 / (2 eps^2)`` and its diagnostics.

The default stepper is Strang splitting with an exact spectral kinetic step on
a periodic box. A Crank-Nicolson stepper on the five-point Laplacian is kept
as a cross-check. The band energy ``E_n / eps`` is removed from the phase so
that a state sitting in band ``n`` evolves on the slow longitudinal scale.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RectBivariateSpline

from .geometry import (
    MetricGraph,
    distance_to_graph,
    edge_frame,
    from_edge_coords,
    squared_distance_grid,
    squared_distance_per_edge,
    to_edge_coords,
)
from .modes import mode_energy, mode_eval, transverse_cutoff

__all__ = [
    "NumericalInstability",
    "Grid2D",
    "Field2D",
    "EvolutionConfig",
    "PropagationResult",
    "Profile",
    "prepare_initial",
    "propagate",
    "band_phase_rate",
    "project_subband",
    "SubbandTrace",
    "TraceRecorder",
    "weak_pairing",
    "tail_mass",
    "edge_masses",
    "energy_components",
    "total_energy",
    "coupling_residual",
    "save_snapshot",
    "load_snapshot",
    "write_trace_csv",
]


class NumericalInstability(RuntimeError):
    """Raised when a propagation loses unitarity beyond the abort threshold."""


# ---------------------------------------------------------------- grids/fields


@dataclass(frozen=True)
class Grid2D:
    """Periodic tensor grid on ``[x0, x1) x [y0, y1)``."""

    x0: float
    x1: float
    y0: float
    y1: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("empty grid extent")
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs at least 4 points per axis")

    @property
    def x(self) -> np.ndarray:
        return self.x0 + (self.x1 - self.x0) * np.arange(self.nx) / self.nx

    @property
    def y(self) -> np.ndarray:
        return self.y0 + (self.y1 - self.y0) * np.arange(self.ny) / self.ny

    @property
    def hx(self) -> float:
        return (self.x1 - self.x0) / self.nx

    @property
    def hy(self) -> float:
        return (self.y1 - self.y0) / self.ny

    @property
    def cell(self) -> float:
        return self.hx * self.hy

    @property
    def is_pow2(self) -> bool:
        return _pow2(self.nx) and _pow2(self.ny)

    def points_per_sqrt_eps(self, epsilon: float) -> float:
        return np.sqrt(epsilon) / max(self.hx, self.hy)

    def meshgrid(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    @classmethod
    def covering(cls, x0, x1, y0, y1, epsilon, points_per_sqrt_eps=10.0, anchor=None):
        """Power-of-two grid containing the box with spacing ``sqrt(eps) / points_per_sqrt_eps``.

        The box is enlarged to a power-of-two number of cells. With ``anchor``
        given, the grid is shifted so that this point is a node (used to put
        graph vertices on nodes, which makes edge projections exact sums).
        """
        h = np.sqrt(epsilon) / points_per_sqrt_eps
        nx = 1 << int(np.ceil(np.log2((x1 - x0) / h)))
        ny = 1 << int(np.ceil(np.log2((y1 - y0) / h)))
        if anchor is not None:
            ax, ay = anchor
            # keep the requested lower-left corner inside, snapped down onto the anchor lattice
            x0 = ax - np.ceil((ax - x0) / h) * h
            y0 = ay - np.ceil((ay - y0) / h) * h
        else:
            # center the surplus so the requested box is fully inside
            x0 -= 0.5 * (nx * h - (x1 - x0))
            y0 -= 0.5 * (ny * h - (y1 - y0))
        return cls(float(x0), float(x0 + nx * h), float(y0), float(y0 + ny * h), nx, ny)

    def to_dict(self) -> dict:
        return asdict(self)


def _pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass
class Field2D:
    values: np.ndarray
    grid: Grid2D

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(f"values shape {self.values.shape} does not match grid")

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.cell))

    def inner(self, other: "Field2D") -> complex:
        return complex(np.vdot(self.values, other.values) * self.grid.cell)

    def copy(self) -> "Field2D":
        return Field2D(self.values.copy(), self.grid)


# ---------------------------------------------------------------- profiles


@dataclass(frozen=True)
class Profile:
    """Longitudinal profile ``amplitude * envelope(x) * exp(i k0 x)``.

    ``envelope`` is any callable with a ``support`` attribute, for example a
    :class:`~softgraph.cutoff.Cutoff`.
    """

    envelope: Callable
    k0: float = 0.0
    amplitude: float = 1.0

    @property
    def support(self) -> tuple[float, float]:
        return tuple(self.envelope.support)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.amplitude * self.envelope(x) * np.exp(1j * self.k0 * x)

    def normalized(self, nodes: int = 4001) -> "Profile":
        a, b = self.support
        xs = np.linspace(a, b, nodes)
        nrm = np.sqrt(np.trapezoid(np.abs(self.envelope(xs)) ** 2, xs))
        return Profile(self.envelope, self.k0, 1.0 / nrm)

    def norm(self, nodes: int = 4001) -> float:
        a, b = self.support
        xs = np.linspace(a, b, nodes)
        return float(np.sqrt(np.trapezoid(np.abs(self(xs)) ** 2, xs)))


def _singular_vertices(g: MetricGraph) -> set[int]:
    # a degree-2 vertex joining opposite rays is a regular point of a straight line
    inc: dict[int, list[np.ndarray]] = {}
    for e in g.edges:
        inc.setdefault(e.start, []).append(np.asarray(e.direction))
    out = set(range(len(g.vertices)))
    for v, dirs in inc.items():
        if len(dirs) == 2 and np.dot(dirs[0], dirs[1]) < -1 + 1e-12 and v not in (g._end_index or ()):
            out.discard(v)
    return out


def prepare_initial(f: Callable, j0: int, n: int, epsilon: float, grid: Grid2D, g: MetricGraph) -> Field2D:
    """Sample ``f(x_j) Phi_n(y_j)`` in the frame of edge ``j0``.

    Raises
    ------
    ValueError
        If the support of ``f`` comes within ``6 sqrt(eps)`` of a vertex
        endpoint of the edge, if the grid has fewer than 10 points per
        ``sqrt(eps)``, or if the mode does not fit inside the grid.
    """
    fr = edge_frame(g, j0)
    a, b = f.support
    e = g.edges[j0]
    gap = 6.0 * np.sqrt(epsilon)
    start_singular = e.start in _singular_vertices(g)
    if (start_singular and a < gap) or b > e.length - gap:
        raise ValueError(
            f"profile support [{a}, {b}] within {gap:.3g} of an endpoint of edge {j0} (length {e.length})"
        )
    if grid.points_per_sqrt_eps(epsilon) < 10.0 - 1e-9:
        raise ValueError(
            f"grid cannot resolve the mode: {grid.points_per_sqrt_eps(epsilon):.2f} points per sqrt(eps), need 10"
        )
    c = transverse_cutoff(n, epsilon)
    corners = from_edge_coords(fr, np.array([a, a, b, b]), np.array([-c, c, -c, c]))
    if (
        corners[:, 0].min() < grid.x0
        or corners[:, 0].max() > grid.x1 - grid.hx
        or corners[:, 1].min() < grid.y0
        or corners[:, 1].max() > grid.y1 - grid.hy
    ):
        raise ValueError("grid cannot resolve the mode: profile x transverse cutoff leaves the box")
    X, Y = grid.meshgrid()
    xj, yj = to_edge_coords(fr, np.stack([X, Y], axis=-1))
    return Field2D(f(xj) * mode_eval(n, epsilon, yj), grid)


# ---------------------------------------------------------------- stepping


@dataclass(frozen=True)
class EvolutionConfig:
    """Time-stepping parameters.

    ``phase`` selects how the band energy is removed: ``"stepper"`` uses the
    band energy of the discrete one-step map (removes the splitting phase
    error), ``"exact"`` uses ``(n + 1/2) / eps``, ``"none"`` keeps the raw
    evolution.
    """

    epsilon: float
    n: int = 0
    dt: float = 1e-3
    T: float = 0.5
    stepper: str = "spectral-split"
    phase: str = "stepper"
    threads: int = 1

    def __post_init__(self):
        if not self.epsilon > 0 or not self.dt > 0 or not self.T > 0:
            raise ValueError("epsilon, dt and T must be positive")
        if self.stepper not in ("spectral-split", "implicit"):
            raise ValueError(f"unknown stepper {self.stepper!r}")
        if self.phase not in ("stepper", "exact", "none"):
            raise ValueError(f"unknown phase mode {self.phase!r}")
        if abs(self.T / self.dt - round(self.T / self.dt)) > 1e-8 * max(1.0, self.T / self.dt):
            raise ValueError(f"T/dt = {self.T / self.dt} is not an integer")
        # the transverse period 2 pi eps must be resolved for the band phase to be meaningful
        if self.dt / self.epsilon > 1.0:
            raise ValueError(
                f"stability rule violated: dt * omega = {self.dt / self.epsilon:.3g} > 1 (omega = 1/eps)"
            )

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def mode_epsilon(self) -> float:
        """Transverse scale of the modes that the one-step map leaves invariant.

        V/2-T-V/2 on a harmonic well of frequency ``w`` is the exact flow of a
        well with frequency ``w' = w sqrt(1 - (w dt)^2 / 4)`` for the Gaussian
        width, so preparing and projecting with ``1/w'`` instead of ``eps``
        removes the O((w dt)^2) breathing into bands ``n +- 2`` on straight
        edges. Other steppers return ``eps``.
        """
        if self.stepper != "spectral-split" or self.phase != "stepper":
            return self.epsilon
        w = 1.0 / self.epsilon
        return 1.0 / (w * np.sqrt(1.0 - 0.25 * (w * self.dt) ** 2))


def band_phase_rate(cfg: EvolutionConfig) -> float:
    """Energy removed per unit time for the configured band and phase mode."""
    if cfg.phase == "none":
        return 0.0
    if cfg.phase == "exact" or cfg.stepper == "implicit":
        return mode_energy(cfg.n, cfg.epsilon)
    # V/2-T-V/2 on a harmonic well of frequency w rotates phase space by
    # w~ dt with cos(w~ dt) = 1 - (w dt)^2 / 2
    w = 1.0 / cfg.epsilon
    wt = np.arccos(1.0 - 0.5 * (w * cfg.dt) ** 2) / cfg.dt
    return (cfg.n + 0.5) * wt


@dataclass
class PropagationResult:
    final: Field2D
    times: list[float]
    norms: list[float]
    boundary_mass: float
    snapshots: list[Field2D] = field(default_factory=list)

    @property
    def norm_drift(self) -> float:
        return float(max(abs(v - self.norms[0]) for v in self.norms))


def potential_grid(g: MetricGraph | None, grid: Grid2D, epsilon: float) -> np.ndarray:
    if g is None:
        return np.zeros((grid.nx, grid.ny))
    return squared_distance_grid(g, grid.x, grid.y) / (2.0 * epsilon**2)


def boundary_mass(values: np.ndarray, grid: Grid2D, width: int = 8) -> float:
    """Norm of the field on the outer ``width`` rows/columns of the periodic box."""
    m = np.ones(values.shape, dtype=bool)
    m[width:-width, width:-width] = False
    return float(np.sqrt(np.sum(np.abs(values[m]) ** 2) * grid.cell))


def _kinetic_symbol(grid: Grid2D):
    kx = 2 * np.pi * sfft.fftfreq(grid.nx, grid.hx)
    ky = 2 * np.pi * sfft.fftfreq(grid.ny, grid.hy)
    return 0.5 * (kx[:, None] ** 2 + ky[None, :] ** 2)


def _laplacian_1d(n: int, h: float) -> sp.csr_matrix:
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    L = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    L[0, n - 1] = 1.0
    L[n - 1, 0] = 1.0
    return (L / h**2).tocsr()


def fd_hamiltonian(grid: Grid2D, V: np.ndarray) -> sp.csc_matrix:
    """Five-point periodic discretization of ``-1/2 Laplacian + V`` (row-major ``(ix, iy)``)."""
    Lx = _laplacian_1d(grid.nx, grid.hx)
    Ly = _laplacian_1d(grid.ny, grid.hy)
    lap = sp.kron(Lx, sp.identity(grid.ny)) + sp.kron(sp.identity(grid.nx), Ly)
    return (-0.5 * lap + sp.diags(V.ravel())).tocsc()


def propagate(
    field0: Field2D,
    cfg: EvolutionConfig,
    g: MetricGraph | None,
    record_every: int | None = None,
    observers: Iterable[Callable[[float, np.ndarray], None]] = (),
    keep_snapshots: bool = False,
    abort_drift: float = 1e-4,
    sq_distance: np.ndarray | None = None,
) -> PropagationResult:
    """Approximate ``exp(-i T (H - E))`` applied to ``field0``.

    ``g=None`` switches the confining potential off; ``sq_distance`` replaces
    the graph distance by a precomputed squared-distance field on the grid. Observers are called as
    ``obs(t, values)`` at ``t = 0``, every ``record_every`` steps and at ``T``;
    they must not modify ``values``.

    Raises
    ------
    NumericalInstability
        If the norm drifts by more than ``abort_drift``.
    ValueError
        If the spectral stepper is used on a non power-of-two grid.
    """
    grid = field0.grid
    if cfg.stepper == "spectral-split" and not grid.is_pow2:
        raise ValueError("spectral stepper needs power-of-two grid sizes")
    if sq_distance is not None:
        V = np.asarray(sq_distance, dtype=float) / (2.0 * cfg.epsilon**2)
    else:
        V = potential_grid(g, grid, cfg.epsilon)
    nsteps = cfg.steps
    dt = cfg.T / nsteps
    every = record_every or nsteps
    observers = list(observers)
    psi = field0.values.copy()
    n0 = field0.norm()
    times: list[float] = []
    norms: list[float] = []
    snaps: list[Field2D] = []
    bmass = 0.0

    def observe(k, arr):
        nonlocal bmass
        t = k * dt
        times.append(t)
        nrm = float(np.sqrt(np.sum(np.abs(arr) ** 2) * grid.cell))
        norms.append(nrm)
        if not np.isfinite(nrm) or abs(nrm - n0) > abort_drift:
            raise NumericalInstability(
                f"norm drift {abs(nrm - n0):.3e} at t={t:.4g} exceeds {abort_drift:g} "
                f"(eps={cfg.epsilon}, dt={dt:.3g}, stepper={cfg.stepper})"
            )
        bmass = max(bmass, boundary_mass(arr, grid))
        for obs in observers:
            obs(t, arr)
        if keep_snapshots:
            snaps.append(Field2D(arr.copy(), grid))

    E = band_phase_rate(cfg)
    observe(0, psi)
    if cfg.stepper == "spectral-split":
        half = np.exp(-0.5j * dt * V)
        full = half * half * np.exp(1j * E * dt)
        half_ph = half * np.exp(1j * E * dt)
        kin = np.exp(-1j * dt * _kinetic_symbol(grid))
        psi *= half
        for k in range(1, nsteps + 1):
            psi = sfft.ifft2(kin * sfft.fft2(psi, workers=cfg.threads, overwrite_x=True), workers=cfg.threads, overwrite_x=True)
            if k % every == 0 or k == nsteps:
                psi *= half_ph
                observe(k, psi)
                if k < nsteps:
                    psi *= half
            else:
                psi *= full
    else:
        H = fd_hamiltonian(grid, V - E)
        eye = sp.identity(H.shape[0], format="csc")
        lu = spla.splu((eye + 0.5j * dt * H).tocsc())
        rhs_op = (eye - 0.5j * dt * H).tocsr()
        vec = psi.ravel()
        for k in range(1, nsteps + 1):
            vec = lu.solve(rhs_op @ vec)
            if k % every == 0 or k == nsteps:
                psi = vec.reshape(grid.nx, grid.ny)
                observe(k, psi)
        psi = vec.reshape(grid.nx, grid.ny)
    return PropagationResult(Field2D(psi, grid), times, norms, bmass, snaps)


# ---------------------------------------------------------------- projections


def _axis_aligned(fr, grid: Grid2D) -> int | None:
    """0 if the tangent is +-x and the edge sits on a grid row, 1 for +-y, else None."""
    t = fr.tangent
    if abs(abs(t[0]) - 1.0) < 1e-14:
        # transverse direction runs along grid y
        if abs(((fr.origin[1] - grid.y0) / grid.hy) - round((fr.origin[1] - grid.y0) / grid.hy)) < 1e-9:
            return 0
    if abs(abs(t[1]) - 1.0) < 1e-14:
        if abs(((fr.origin[0] - grid.x0) / grid.hx) - round((fr.origin[0] - grid.x0) / grid.hx)) < 1e-9:
            return 1
    return None


def project_subband(
    field: Field2D,
    g: MetricGraph,
    j: int,
    m: int,
    epsilon: float,
    xs: np.ndarray | None = None,
    method: str = "auto",
    spline_degree: int = 5,
    gl_nodes: int = 96,
):
    """Band-``m`` amplitude ``s(x) = int Phi_m(y) psi(x, y) dy`` along edge ``j``.

    On edges parallel to a grid axis whose line passes through grid nodes the
    integral is the exact grid quadrature along columns. Otherwise the field
    is interpolated by a tensor spline along normal lines and integrated with
    Gauss-Legendre nodes over the truncated transverse range.

    Returns
    -------
    xs, s : ndarray
        Edge coordinates and complex amplitudes.

    Raises
    ------
    ValueError
        If sampling lines leave the grid; the message reports the clipped fraction.
    """
    grid = field.grid
    fr = edge_frame(g, j)
    length = g.edges[j].length
    c = transverse_cutoff(m, epsilon)
    # explicit sample positions always go through interpolation
    axis = _axis_aligned(fr, grid) if method in ("auto", "grid") and xs is None else None
    if method == "grid" and axis is None:
        raise ValueError("grid quadrature needs an axis-aligned edge on grid nodes")

    if axis is not None:
        along = grid.x if axis == 0 else grid.y
        across = grid.y if axis == 0 else grid.x
        h_across = grid.hy if axis == 0 else grid.hx
        sign_t = fr.tangent[axis]
        xj_all = sign_t * (along - fr.origin[axis])
        # normal is the tangent rotated by +90 degrees
        ncomp = fr.normal[1 - axis]
        yj = ncomp * (across - fr.origin[1 - axis])
        if yj.min() > -c or yj.max() < c:
            frac = float(np.mean([yj.min() > -c, yj.max() < c]))
            raise ValueError(f"sampling lines leave the grid (clipped fraction {frac:.2f} of the transverse range)")
        keep = (xj_all >= 0.0) & (xj_all <= length)
        w = np.abs(yj) <= c
        phi = mode_eval(m, epsilon, yj[w])
        vals = field.values if axis == 0 else field.values.T
        s = vals[keep][:, w] @ phi * h_across
        order = np.argsort(xj_all[keep])
        return xj_all[keep][order], s[order]

    if xs is None:
        h = min(grid.hx, grid.hy)
        # default sampling: all edge positions whose normal segment lies in the box
        lo = 0.0
        hi = length if np.isfinite(length) else np.hypot(grid.x1 - grid.x0, grid.y1 - grid.y0)
        xs = np.arange(lo, hi + 0.5 * h, h)
        ends = np.stack(
            [from_edge_coords(fr, xs, -c * np.ones_like(xs)), from_edge_coords(fr, xs, c * np.ones_like(xs))]
        )
        inside = np.all(
            (ends[..., 0] >= grid.x0) & (ends[..., 0] <= grid.x1 - grid.hx)
            & (ends[..., 1] >= grid.y0) & (ends[..., 1] <= grid.y1 - grid.hy),
            axis=0,
        )
        xs = xs[inside]
    xs = np.asarray(xs, dtype=float)
    u, wu = np.polynomial.legendre.leggauss(gl_nodes)
    yq = c * u
    wq = c * wu
    pts = from_edge_coords(fr, xs[:, None], yq[None, :])
    px, py = pts[..., 0], pts[..., 1]
    out = (px < grid.x0) | (px > grid.x1 - grid.hx) | (py < grid.y0) | (py > grid.y1 - grid.hy)
    if np.any(out):
        raise ValueError(f"sampling lines leave the grid (clipped fraction {np.mean(out):.3f})")
    kx = ky = spline_degree
    sre = RectBivariateSpline(grid.x, grid.y, field.values.real, kx=kx, ky=ky)
    sim = RectBivariateSpline(grid.x, grid.y, field.values.imag, kx=kx, ky=ky)
    vals = sre.ev(px, py) + 1j * sim.ev(px, py)
    s = vals @ (mode_eval(m, epsilon, yq) * wq)
    return xs, s


@dataclass
class SubbandTrace:
    """Band-``band`` amplitudes on edge ``edge`` at successive times."""

    edge: int
    band: int
    x: np.ndarray
    times: list[float] = field(default_factory=list)
    signals: list[np.ndarray] = field(default_factory=list)

    def append(self, t: float, s: np.ndarray) -> None:
        self.times.append(float(t))
        self.signals.append(np.asarray(s))

    def norms(self) -> np.ndarray:
        h = self.x[1] - self.x[0]
        return np.array([np.sqrt(np.sum(np.abs(s) ** 2) * h) for s in self.signals])


class TraceRecorder:
    """Observer collecting subband traces during :func:`propagate`."""

    def __init__(self, g: MetricGraph, grid: Grid2D, epsilon: float, pairs: Iterable[tuple[int, int]]):
        self.g = g
        self.grid = grid
        self.epsilon = epsilon
        self.traces: dict[tuple[int, int], SubbandTrace] = {}
        self._pairs = list(pairs)

    def __call__(self, t: float, values: np.ndarray) -> None:
        fld = Field2D(values, self.grid)
        for j, m in self._pairs:
            xs, s = project_subband(fld, self.g, j, m, self.epsilon)
            tr = self.traces.setdefault((j, m), SubbandTrace(j, m, xs))
            tr.append(t, s)


def weak_pairing(trace: SubbandTrace, chi) -> np.ndarray:
    """``<chi, s(t)>`` for every recorded time, by quadrature on the trace grid.

    Raises
    ------
    ValueError
        If the support of ``chi`` is not inside the sampled edge range.
    """
    a, b = chi.support
    if a <= 0.0 or a < trace.x.min() or b > trace.x.max():
        raise ValueError(
            f"test function support [{a}, {b}] outside the edge range [{trace.x.min():.3g}, {trace.x.max():.3g}]"
        )
    h = trace.x[1] - trace.x[0]
    cx = np.conj(chi(trace.x))
    return np.array([np.sum(cx * s) * h for s in trace.signals])


# ---------------------------------------------------------------- diagnostics


def tail_mass(field: Field2D, g: MetricGraph, delta0: float) -> float:
    """Norm of the field restricted to ``{d >= delta0}``."""
    grid = field.grid
    if delta0 <= 3.0 * max(grid.hx, grid.hy):
        raise ValueError(f"delta0={delta0} must exceed three grid spacings")
    far = squared_distance_grid(g, grid.x, grid.y) >= delta0**2
    return float(np.sqrt(np.sum(np.abs(field.values[far]) ** 2) * grid.cell))


def edge_masses(field: Field2D, g: MetricGraph, delta0: float, core: float = 0.0) -> np.ndarray:
    """Squared mass near each edge: points within ``delta0`` whose nearest edge is that one.

    Points within ``core`` of a vertex are excluded, so the split measures how much
    of the packet left the vertex region along each edge.
    """
    grid = field.grid
    X, Y = grid.x[:, None], grid.y[None, :]
    d2 = squared_distance_per_edge(g, grid.x, grid.y)
    nearest = np.argmin(d2, axis=0)
    keep = np.min(d2, axis=0) < delta0**2
    for v in g.vertex_array:
        keep &= (X - v[0]) ** 2 + (Y - v[1]) ** 2 >= core**2
    dens = np.abs(field.values) ** 2 * grid.cell
    return np.array([float(np.sum(dens[keep & (nearest == k)])) for k in range(len(d2))])


def energy_components(field: Field2D, g: MetricGraph, epsilon: float):
    """Return ``(1/2 |d_x psi|^2, 1/2 |d_y psi|^2, |d psi|^2 / (2 eps^2))`` with spectral derivatives."""
    grid = field.grid
    kx = 2 * np.pi * sfft.fftfreq(grid.nx, grid.hx)
    ky = 2 * np.pi * sfft.fftfreq(grid.ny, grid.hy)
    F = sfft.fft2(field.values)
    # Parseval on the periodic box
    scale = grid.cell / (grid.nx * grid.ny)
    ex = 0.5 * np.sum(np.abs(kx[:, None] * F) ** 2) * scale
    ey = 0.5 * np.sum(np.abs(ky[None, :] * F) ** 2) * scale
    d2 = squared_distance_grid(g, grid.x, grid.y)
    ep = np.sum(d2 * np.abs(field.values) ** 2) * grid.cell / (2.0 * epsilon**2)
    return float(ex), float(ey), float(ep)


def total_energy(field: Field2D, g: MetricGraph, epsilon: float, shift: float = 0.0) -> float:
    """``<psi, (H - shift) psi>``."""
    return sum(energy_components(field, g, epsilon)) - shift * field.norm() ** 2


def coupling_residual(
    f: Callable,
    n: int,
    epsilon: float,
    g: MetricGraph,
    j: int = 0,
    nx: int = 801,
    ny: int = 1601,
) -> float:
    """``|| (d^2 - y_j^2) f Phi_n || / (2 eps^2)`` on a tensor grid in the frame of edge ``j``.

    The grid spans the support of ``f`` along the edge and ``|y| <= 12 sqrt(eps)``
    across it, so the whole region where the state lives is covered.
    """
    a, b = f.support
    fr = edge_frame(g, j)
    xs = np.linspace(a, b, nx)
    Y = 12.0 * np.sqrt(epsilon) * max(1.0, np.sqrt(n + 0.5))
    ys = np.linspace(-Y, Y, ny)
    pts = from_edge_coords(fr, xs[:, None], ys[None, :])
    d2 = distance_to_graph(g, pts) ** 2
    integrand = (d2 - ys[None, :] ** 2) * (f(xs)[:, None] * mode_eval(n, epsilon, ys)[None, :])
    hx = xs[1] - xs[0]
    hy = ys[1] - ys[0]
    return float(np.sqrt(np.sum(np.abs(integrand) ** 2) * hx * hy) / (2.0 * epsilon**2))


# ---------------------------------------------------------------- I/O


def save_snapshot(field: Field2D, path, epsilon: float, t: float) -> Path:
    """Write ``path.npy`` with the values and ``path.json`` with grid, eps and t."""
    path = Path(path)
    np.save(path.with_suffix(".npy"), field.values)
    meta = {"grid": field.grid.to_dict(), "epsilon": epsilon, "t": t}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))
    return path.with_suffix(".npy")


def load_snapshot(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    vals = np.load(path.with_suffix(".npy"))
    return Field2D(vals, Grid2D(**meta["grid"])), meta


def write_trace_csv(trace: SubbandTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "re", "im"])
        for t, s in zip(trace.times, trace.signals):
            for x, v in zip(trace.x, s):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(v.real)), repr(float(v.imag))])
