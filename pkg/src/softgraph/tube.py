"""Dirichlet tube around the bent curve and the comparisons between its three dynamics.

The tube operator is written for ``phi = J^(1/2) psi`` in the flat measure
``ds du``::

    -1/2 d_s J^-2 d_s  -  1/2 d_u^2  +  u^2 / (2 eps^2)  +  V(s, u)

which expands to the curvilinear form with the first-order ``J^-3 u k' d_s``
term and is symmetric by construction. In ``u`` the field is expanded in the
lowest eigenmodes of the transverse box operator on ``(-w, w)`` (computed
with a sine DVR, so the Dirichlet walls are exact); in ``s`` a conservative
staggered stencil is used. Time stepping uses diagonal Pade approximants of the exponential, which
are unitary for the symmetric discrete operator.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.interpolate import make_interp_spline

from .bent import (
    CurvatureProfile,
    rational_stepper,
    staggered_difference,
    LineGrid,
    curvature_eval,
    effective_propagate,
    geometric_potential,
    jacobian,
    plane_to_tube,
    reconstruct_curve,
)
from .modes import mode_eval
from .planar import EvolutionConfig, Field2D, Grid2D, NumericalInstability, propagate

__all__ = [
    "delta_schedule",
    "DeltaSchedule",
    "dvr_nodes",
    "dvr_kinetic",
    "TubeGrid",
    "tube_hamiltonian",
    "tube_propagate",
    "compare_tube_vs_effective",
    "compare_plane_vs_tube",
    "TransverseBasis",
    "tube_norm",
    "save_tube_snapshot",
    "load_tube_snapshot",
]


@dataclass(frozen=True)
class DeltaSchedule:
    delta: float
    admissible_tail: bool
    admissible_full: bool


def delta_schedule(epsilon: float, beta: float) -> DeltaSchedule:
    """``delta = eps**beta`` with admissibility flags.

    ``eps^(1/2) / delta -> 0`` needs ``beta < 1/2`` (tail estimate);
    ``eps^(1/10) / delta -> 0`` needs ``beta < 1/10`` (full comparison).
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return DeltaSchedule(float(epsilon**beta), beta < 0.5, beta < 0.1)


# ---------------------------------------------------------------- transverse DVR


def dvr_nodes(nu: int, w: float) -> np.ndarray:
    """Interior nodes ``-w + 2 w j / nu``, ``j = 1 .. nu - 1``."""
    return -w + 2.0 * w * np.arange(1, nu) / nu


def _sine_matrix(nu: int) -> np.ndarray:
    j = np.arange(1, nu)
    return np.sqrt(2.0 / nu) * np.sin(np.pi * np.outer(j, j) / nu)


def dvr_kinetic(nu: int, w: float) -> np.ndarray:
    """``-1/2 d^2/du^2`` with Dirichlet walls at ``+-w`` in the sine DVR (exact on the sine basis)."""
    S = _sine_matrix(nu)
    k = np.arange(1, nu)
    return S @ np.diag(0.5 * (np.pi * k / (2.0 * w)) ** 2) @ S


def sine_interpolate(values: np.ndarray, w: float, u) -> np.ndarray:
    """Evaluate the sine series through DVR node ``values[..., nu - 1]`` at points ``u``."""
    nu = values.shape[-1] + 1
    S = _sine_matrix(nu)
    c = values @ S
    k = np.arange(1, nu)
    u = np.asarray(u, dtype=float)
    basis = np.sin(np.pi * np.outer(u.ravel() + w, k) / (2.0 * w)) * np.sqrt(2.0 / nu)
    inside = (np.abs(u.ravel()) < w)[:, None]
    return (basis * inside) @ c.T if values.ndim > 1 else (basis * inside) @ c


@dataclass(frozen=True)
class TubeGrid:
    """Discretization of the tube ``[s0, s1] x (-w, w)``.

    ``ns`` interior s-nodes, ``nu - 1`` interior DVR nodes across, and the
    ``nmodes`` lowest transverse box modes kept in the expansion; ``order``
    is the accuracy of the staggered s-stencil (2 or 4).
    """

    s0: float
    s1: float
    ns: int
    w: float
    nu: int = 128
    nmodes: int = 12
    order: int = 4

    @property
    def line(self) -> LineGrid:
        return LineGrid(self.s0, self.s1, self.ns)

    @property
    def s(self) -> np.ndarray:
        return self.line.s

    @property
    def u(self) -> np.ndarray:
        return dvr_nodes(self.nu, self.w)

    @property
    def hu(self) -> float:
        return 2.0 * self.w / self.nu


class TransverseBasis:
    """Box eigenmodes of ``-1/2 d_u^2 + u^2 / (2 eps^2)`` on ``(-w, w)``.

    ``vectors[:, m]`` holds mode ``m`` at the DVR nodes, normalized so that
    ``sum |v|^2 hu = 1`` and with the sign of the free Hermite function.
    """

    def __init__(self, tube: TubeGrid, epsilon: float):
        self.tube = tube
        self.epsilon = epsilon
        u = tube.u
        H = dvr_kinetic(tube.nu, tube.w) + np.diag(u**2 / (2.0 * epsilon**2))
        vals, vecs = sla.eigh(H, subset_by_index=[0, tube.nmodes - 1])
        vecs = vecs / np.sqrt(tube.hu)
        for m in range(tube.nmodes):
            ref = mode_eval(min(m, 12), epsilon, u) if m <= 12 else vecs[:, m]
            if np.dot(ref, vecs[:, m]) < 0:
                vecs[:, m] *= -1
        self.energies = vals
        self.vectors = vecs

    def to_nodes(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients ``(..., nmodes)`` to DVR node values ``(..., nu - 1)``."""
        return coeffs @ self.vectors.T

    def from_nodes(self, values: np.ndarray) -> np.ndarray:
        return values @ self.vectors * self.tube.hu

    def matrix(self, weights: np.ndarray) -> np.ndarray:
        """``<chi_m | g | chi_n>`` for multiplication operators ``g`` at the DVR nodes, batched on leading axes."""
        V = self.vectors
        return np.einsum("jm,...j,jn->...mn", V, weights, V) * self.tube.hu


def tube_hamiltonian(
    p: CurvatureProfile,
    tube: TubeGrid,
    basis: TransverseBasis,
    shift: float = 0.0,
    exact: bool = True,
) -> sp.csr_matrix:
    """Sparse tube operator on mode coefficients (s-major ordering).

    The s-part is ``1/2 D^T A D`` with ``D`` the staggered difference of the
    grid's ``order`` acting on every mode and ``A`` the block-diagonal
    matrices ``<chi_m | J^-2 | chi_n>`` at the cell midpoints.
    """
    s = tube.s
    u = tube.u
    M = tube.nmodes
    mids = tube.line.midpoints
    jacobian(p, mids[:, None], u[None, :])  # rejects tubes wider than the curvature radius
    Jm = 1.0 + u[None, :] * curvature_eval(p, mids)[0][:, None]
    A = basis.matrix(Jm**-2)  # (ns + 1, M, M)
    V = geometric_potential(p, s[:, None], u[None, :], exact=exact)
    Vm = basis.matrix(V) + np.diag(basis.energies - shift)[None]  # (ns, M, M)
    D = sp.kron(staggered_difference(tube.line, tube.order), sp.identity(M), format="csr")
    nb = len(mids)
    Ab = sp.bsr_matrix((A, np.arange(nb), np.arange(nb + 1)), shape=(nb * M, nb * M))
    Vb = sp.bsr_matrix((Vm, np.arange(tube.ns), np.arange(tube.ns + 1)), shape=(tube.ns * M, tube.ns * M))
    return (0.5 * D.T @ Ab.tocsr() @ D + Vb.tocsr()).tocsr()


def tube_propagate(
    p: CurvatureProfile,
    tube: TubeGrid,
    epsilon: float,
    psi0: np.ndarray,
    T: float,
    dt: float = 1e-3,
    times=None,
    shift: float | None = None,
    exact: bool = True,
    basis: TransverseBasis | None = None,
    abort_drift: float = 1e-6,
    scheme: str = "pade4",
):
    """Implicit unitary evolution in the tube (``scheme`` as in :func:`rational_stepper`).

    ``psi0`` is either mode coefficients ``(ns, nmodes)`` or node values
    ``(ns, nu - 1)`` of the flat-measure field. ``shift`` is subtracted from
    the operator (default: the band-0 box energy is not removed, shift 0).

    Returns
    -------
    list of ndarray
        Mode coefficients at each requested time.
    """
    basis = basis or TransverseBasis(tube, epsilon)
    c = np.asarray(psi0, dtype=complex)
    if c.shape == (tube.ns, tube.nu - 1):
        c = basis.from_nodes(c)
    if c.shape != (tube.ns, tube.nmodes):
        raise ValueError(f"initial tube field has shape {c.shape}")
    H = tube_hamiltonian(p, tube, basis, shift=shift or 0.0, exact=exact)
    step = rational_stepper(H, dt, scheme)
    times = [T] if times is None else list(times)
    steps = [int(round(t / dt)) for t in times]
    if any(abs(k * dt - t) > 1e-9 * max(1.0, t) for k, t in zip(steps, times)):
        raise ValueError("output times must be multiples of dt")
    vec = c.ravel()
    n0 = np.sqrt(np.sum(np.abs(vec) ** 2) * tube.line.h)
    out = []
    k = 0
    for target in steps:
        while k < target:
            vec = step(vec)
            k += 1
        nrm = np.sqrt(np.sum(np.abs(vec) ** 2) * tube.line.h)
        if abs(nrm - n0) > abort_drift * max(1.0, n0):
            raise NumericalInstability(f"tube norm drift {abs(nrm - n0):.3e} at t={k * dt:.4g}")
        out.append(vec.reshape(tube.ns, tube.nmodes).copy())
    return out


def tube_norm(coeffs: np.ndarray, tube: TubeGrid) -> float:
    return float(np.sqrt(np.sum(np.abs(coeffs) ** 2) * tube.line.h))


def compare_tube_vs_effective(
    p: CurvatureProfile,
    epsilon: float,
    n: int,
    f,
    T: float,
    tube: TubeGrid,
    dt: float = 1e-3,
    times=None,
    beta: float | None = None,
    exact: bool = True,
    scheme: str = "pade4",
):
    """``|| tube(f chi_n) - J^(1/2) (exp(-itK) f) chi_n ||`` at each output time.

    ``chi_n`` and its energy are the box-corrected transverse mode; the box
    energy is removed from the tube operator so both sides carry no band
    phase. The effective evolution uses the same s-stencil and time stepper.

    Returns
    -------
    times, errors : ndarray
    """
    if beta is not None:
        sch = delta_schedule(epsilon, beta)
        if not sch.admissible_full:
            warnings.warn(f"delta schedule beta={beta} is not admissible for the full comparison", stacklevel=2)
    a, b = f.support
    if a < tube.s0 or b > tube.s1 or (b > -p.delta and a < p.delta):
        raise ValueError("profile must lie in the straight part of the tube")
    times = [T] if times is None else list(times)
    basis = TransverseBasis(tube, epsilon)
    s = tube.s
    f0 = f(s).astype(complex)
    c0 = np.zeros((tube.ns, tube.nmodes), dtype=complex)
    c0[:, n] = f0
    tube_states = tube_propagate(
        p, tube, epsilon, c0, T, dt, times, shift=basis.energies[n], exact=exact, basis=basis, scheme=scheme
    )
    _, eff = effective_propagate(p, f0, T, tube.line, dt=dt, method=scheme, times=times, order=tube.order)
    # J^(1/2) chi_n expanded in the box modes, per s-node
    J = 1.0 + tube.u[None, :] * curvature_eval(p, s)[0][:, None]
    proj = basis.from_nodes(np.sqrt(J) * basis.vectors[:, n][None, :])  # (ns, M)
    errs = []
    for cs, g in zip(tube_states, eff):
        diff = cs - g[:, None] * proj
        errs.append(tube_norm(diff, tube))
    return np.asarray(times), np.asarray(errs)


def compare_plane_vs_tube(
    p: CurvatureProfile,
    epsilon: float,
    f,
    n: int,
    T: float,
    grid: Grid2D,
    tube: TubeGrid,
    dt_plane: float,
    dt_tube: float = 1e-3,
    times=None,
    exact: bool = True,
):
    """Tail outside the tube and restricted plane/tube difference.

    The plane state is ``exp(-it H) f Phi_n`` with the squared distance to the
    smooth curve as potential. The tube state is the Dirichlet evolution of
    the same initial state restricted to ``|u| < delta``, mapped to plane
    nodes with ``psi = J^(-1/2) phi``. Both have the band energy removed.

    Returns
    -------
    dict with ``times``, ``tail`` and ``diff`` arrays.
    """
    curve = reconstruct_curve(p)
    times = [T] if times is None else list(times)
    X, Y = grid.meshgrid()
    Q = np.stack([X, Y], axis=-1)
    s_range = (min(tube.s0, grid.x0) - 1.0, max(tube.s1, abs(grid.x1), abs(grid.y1)) + 1.0)
    S, U = plane_to_tube(curve, Q, s_range=s_range)
    D = np.abs(U)
    inside = (D < p.delta) & (S > tube.s0) & (S < tube.s1)

    a, b = f.support
    if b > -p.delta:
        raise ValueError("profile must lie on the incoming straight edge")
    cfg = EvolutionConfig(epsilon=epsilon, n=n, dt=dt_plane, T=T)
    me = cfg.mode_epsilon
    # incoming edge is the x axis for s < -delta, so tubular and Cartesian coordinates agree there
    psi0 = f(X) * mode_eval(n, me, Y) * (X < -p.delta)
    snaps = {}
    want = {int(round(t / dt_plane)) for t in times}

    def grab(t, v):
        k = int(round(t / dt_plane))
        if k in want:
            snaps[k] = v.copy()

    stride = int(np.gcd.reduce([int(round(t / dt_plane)) for t in times if t > 0] + [cfg.steps]))
    propagate(Field2D(psi0, grid), cfg, None, record_every=stride, observers=[grab], sq_distance=U**2)

    basis = TransverseBasis(tube, me)
    s = tube.s
    u = tube.u
    c0 = np.zeros((tube.ns, tube.nmodes), dtype=complex)
    nodes0 = f(s)[:, None] * mode_eval(n, me, u)[None, :] * (s < -p.delta)[:, None]
    c0 = basis.from_nodes(nodes0)
    # each side removes its own band energy
    states = tube_propagate(p, tube, me, c0, T, dt_tube, times, shift=basis.energies[n], exact=exact, basis=basis)

    Sin = S[inside]
    Uin = U[inside]
    Jin = 1.0 + Uin * curvature_eval(p, Sin)[0]
    tails, diffs, pn, tn = [], [], [], []
    for t, cs in zip(times, states):
        plane = snaps[int(round(t / dt_plane))]
        nodes = basis.to_nodes(cs)  # (ns, nu - 1)
        # spline along s with zero Dirichlet ends, then sine series across
        sfull = np.concatenate([[tube.s0], s, [tube.s1]])
        nfull = np.vstack([np.zeros((1, nodes.shape[1])), nodes, np.zeros((1, nodes.shape[1]))])
        spl = make_interp_spline(sfull, nfull, k=5, axis=0)
        along = spl(Sin)  # (npts, nu - 1)
        phi = _sine_rows(along, tube.w, Uin)
        mapped = phi / np.sqrt(Jin)
        tails.append(float(np.sqrt(np.sum(np.abs(plane[~inside]) ** 2) * grid.cell)))
        diffs.append(float(np.sqrt(np.sum(np.abs(plane[inside] - mapped) ** 2) * grid.cell)))
        pn.append(float(np.sqrt(np.sum(np.abs(plane[inside]) ** 2) * grid.cell)))
        tn.append(float(np.sqrt(np.sum(np.abs(mapped) ** 2) * grid.cell)))
    return {
        "times": np.asarray(times),
        "tail": np.asarray(tails),
        "diff": np.asarray(diffs),
        "plane_norm": np.asarray(pn),
        "tube_norm": np.asarray(tn),
    }


def _sine_rows(values: np.ndarray, w: float, u: np.ndarray) -> np.ndarray:
    # row-wise sine interpolation: values[i] are node values for the point u[i]
    nu = values.shape[1] + 1
    S = _sine_matrix(nu)
    c = values @ S
    k = np.arange(1, nu)
    basis = np.sin(np.pi * np.outer(u + w, k) / (2.0 * w)) * np.sqrt(2.0 / nu)
    return np.sum(basis * c, axis=1)



def save_tube_snapshot(coeffs: np.ndarray, tube: TubeGrid, basis: TransverseBasis, path, delta: float,
                       t: float) -> Path:
    """Write the node values to ``path.npy`` and ``{delta, epsilon, t, w}`` plus the grid to ``path.json``."""
    path = Path(path)
    np.save(path.with_suffix(".npy"), basis.to_nodes(np.asarray(coeffs)))
    meta = {"delta": delta, "epsilon": basis.epsilon, "t": t, "w": tube.w, "tube": asdict(tube)}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))
    return path.with_suffix(".npy")


def load_tube_snapshot(path):
    """Inverse of :func:`save_tube_snapshot`; returns node values ``(ns, nu - 1)``, the grid and the metadata."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    return np.load(path.with_suffix(".npy")), TubeGrid(**meta["tube"]), meta
