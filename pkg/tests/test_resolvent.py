import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softgraph.bent import CurvatureProfile, curvature_eval
from softgraph.resolvent import (
    KernelMatrix,
    PanelGrid,
    PotentialQ,
    SpectralParam,
    apply_resolvent,
    build_ABC,
    default_line_grid,
    dirichlet_kernel,
    dirichlet_matrix,
    fd_resolvent_oracle,
    free_kernel,
    free_matrix,
    hs_distance,
    kk_resolvent,
    limit_rank_one,
    write_convergence_report,
)

THETA = 0.95 * np.pi


def _gauss(c, w):
    return lambda x: np.exp(-((np.asarray(x) - c) ** 2) / (2 * w**2))


def _fd_residual(x, u, rhs, V, z, kinetic):
    h = x[1] - x[0]
    up = np.concatenate([[0.0], u, [0.0]])
    lap = (up[2:] - 2 * up[1:-1] + up[:-2]) / h**2
    return -kinetic * lap + V * u - z**2 * u - rhs


def test_free_kernel_values():
    assert free_kernel(1j, 0.0) == pytest.approx(0.5, abs=1e-16)
    w = np.linspace(-4, 4, 17)
    z = 0.3 + 1.1j
    np.testing.assert_array_equal(free_kernel(z, w), free_kernel(z, -w))
    assert abs(free_kernel(z, 10.0)) < abs(free_kernel(z, 0.0)) * np.exp(-10)
    with pytest.raises(ValueError, match="Im z"):
        free_kernel(1.0, 0.0)
    assert SpectralParam(2j).decay_length == 0.5


@pytest.mark.parametrize("z", [1j, 0.3 + 1j])
def test_free_kernel_is_green_function(z):
    h = 1e-3
    s = np.arange(0.1, 3.0, h)
    g = free_kernel(z, s)
    res = -(g[2:] - 2 * g[1:-1] + g[:-2]) / h**2 - z**2 * g[1:-1]
    assert np.max(np.abs(res)) < 1e-6
    e = 1e-7
    jump = (free_kernel(z, e) - free_kernel(z, 0.0)) / e - (free_kernel(z, 0.0) - free_kernel(z, -e)) / e
    assert abs(jump - (-1.0)) < 1e-4


def test_abc_at_zero_delta_are_the_limit_kernels():
    z = 0.3 + 1j
    Q = PotentialQ.from_curvature(THETA)
    line = default_line_grid(z)
    A, B, C = build_ABC(z, 0.0, Q, line)
    s, _ = line.nodes_weights()
    q = Q.sqrt_abs
    # same formulas up to the order of floating-point operations
    np.testing.assert_allclose(A.values, free_kernel(z, s)[:, None] * q[None, :], rtol=1e-15, atol=0)
    np.testing.assert_allclose(B.values, -free_kernel(z, 0.0) * np.outer(q, q), rtol=1e-15, atol=0)
    np.testing.assert_allclose(C.values, -q[:, None] * free_kernel(z, s)[None, :], rtol=1e-15, atol=0)


def test_b_symmetric_and_converges_in_hs():
    z = 0.3 + 1j
    Q = PotentialQ.from_curvature(THETA)
    B0 = build_ABC(z, 0.0, Q)[1]
    dists = []
    for d in (0.4, 0.2, 0.1, 0.05):
        A, B, C = build_ABC(z, d, Q)
        np.testing.assert_array_equal(B.values, B.values.T)
        assert np.isfinite(B.hs_norm())
        dists.append(hs_distance(B, B0))
    assert all(a > b for a, b in zip(dists, dists[1:]))


def test_abc_converge_monotonically():
    z = 1j
    Q = PotentialQ.from_curvature(THETA)
    lims = build_ABC(z, 0.0, Q)
    prev = [np.inf] * 3
    for d in (0.4, 0.2, 0.1, 0.05):
        cur = [hs_distance(K, K0) for K, K0 in zip(build_ABC(z, d, Q), lims)]
        assert all(c < p for c, p in zip(cur, prev))
        prev = cur


def test_line_grid_checks():
    Q = PotentialQ.from_curvature(THETA)
    with pytest.raises(ValueError, match="half-width"):
        build_ABC(1j, 0.1, Q, PanelGrid(-5.0, 5.0, 100))
    with pytest.raises(ValueError, match="oscillation"):
        build_ABC(1j, 0.1, Q, PanelGrid(-12.0, 12.0, 10))
    with pytest.raises(ValueError):
        PanelGrid(1.0, 1.0, 3)


@pytest.mark.parametrize("kinetic", [1.0, 0.5])
def test_zero_well_gives_free_resolvent(kinetic):
    z = 0.3 + 1j
    K = kk_resolvent(z, 0.2, PotentialQ.zero(), kinetic=kinetic)
    G = free_matrix(z, kinetic=kinetic)
    assert hs_distance(K, G) == 0.0


def test_symmetric_kernel_at_imaginary_z():
    K = kk_resolvent(1j, 0.2, PotentialQ.from_curvature(THETA), kinetic=0.5)
    assert np.max(np.abs(K.values - K.values.T)) < 1e-12 * np.max(np.abs(K.values))
    assert K.info["cond"] > 1.0


@pytest.mark.parametrize("kinetic", [1.0, 0.5])
@pytest.mark.parametrize("z", [1j, 0.3 + 1j])
def test_kernel_formula_matches_finite_differences(kinetic, z):
    delta = 0.25
    Q = PotentialQ.from_curvature(THETA)
    rhs = _gauss(0.4, 0.3)
    x, u = fd_resolvent_oracle(delta, z, rhs, THETA, kinetic=kinetic)
    pts = np.linspace(-3, 3, 61)
    ref = np.interp(pts, x, u.real) + 1j * np.interp(pts, x, u.imag)
    got = apply_resolvent(z, delta, Q, rhs, pts, kinetic=kinetic)
    assert np.max(np.abs(got - ref)) / np.max(np.abs(ref)) < 1e-3


def test_kernel_matrix_applied_matches_finite_differences():
    z, delta = 1j, 0.25
    K = kk_resolvent(z, delta, PotentialQ.from_curvature(THETA), kinetic=0.5)
    rhs = _gauss(-0.3, 0.4)
    x, u = fd_resolvent_oracle(delta, z, rhs, THETA, kinetic=0.5)
    sel = np.abs(K.rows) < 3
    got = K.apply(rhs(K.cols))[sel]
    ref = np.interp(K.rows[sel], x, u.real) + 1j * np.interp(K.rows[sel], x, u.imag)
    assert np.max(np.abs(got - ref)) / np.max(np.abs(ref)) < 1e-3


def test_dirichlet_kernel_boundary_and_image_charge():
    z = 1j
    r = np.linspace(-3, 3, 41)
    assert np.all(dirichlet_kernel(z, 0.0, r) == 0.0)
    assert np.all(dirichlet_kernel(z, r, 0.0) == 0.0)
    s = np.array([0.3, 1.0, 2.5])
    rr = np.array([0.7, 0.2, 2.4])
    for sg in (1, -1):
        ref = 0.5 * (np.exp(-np.abs(sg * s - sg * rr)) - np.exp(-(np.abs(s) + np.abs(rr))))
        np.testing.assert_allclose(dirichlet_kernel(z, sg * s, sg * rr), ref, atol=1e-15)
    # the raw image-charge formula already decouples the half-lines
    a, b = np.meshgrid(np.linspace(0.05, 3, 30), -np.linspace(0.05, 3, 30))
    raw = free_kernel(z, a - b) - free_kernel(z, a) * free_kernel(z, -b) / free_kernel(z, 0.0)
    assert np.max(np.abs(raw)) < 1e-14


def test_dirichlet_matrix_half_lines_decouple():
    D = dirichlet_matrix(0.3 + 1j, kinetic=0.5)
    opp = np.sign(D.rows)[:, None] != np.sign(D.cols)[None, :]
    assert np.all(D.values[opp] == 0.0)


def test_rank_one_limit():
    z = 0.3 + 1j
    Q = PotentialQ.from_curvature(THETA)
    lim = limit_rank_one(z, Q)
    w = Q.weights
    assert np.sum(w * lim.phi**2) == pytest.approx(1.0, abs=1e-14)
    lam = -free_kernel(z, 0.0) * Q.l1
    np.testing.assert_allclose(lim.B0.apply(lim.phi), lam * lim.phi, atol=1e-14)
    back = lim.B0.apply(lim.B0_inverse.apply(lim.phi))
    assert np.max(np.abs(back - lim.phi)) < 1e-12
    # the formal delta = 0 kernel of B is the same rank-one operator
    assert hs_distance(build_ABC(z, 0.0, Q)[1], lim.B0) < 1e-13
    with pytest.raises(ValueError):
        limit_rank_one(z, PotentialQ.zero())


def test_potential_q():
    Q = PotentialQ.from_curvature(THETA)
    r = Q.nodes
    np.testing.assert_allclose(Q.values, -(curvature_eval(CurvatureProfile(THETA, 1.0), r)[0] ** 2) / 8)
    # L1 norm of theta^2 k^2 / 8 by dense trapezoid
    xs = np.linspace(-0.75, 0.75, 300001)
    ref = np.trapezoid(curvature_eval(CurvatureProfile(THETA, 1.0), xs)[0] ** 2 / 8, xs)
    assert Q.l1 == pytest.approx(ref, rel=1e-9)
    with pytest.raises(ValueError):
        PotentialQ(r, Q.weights, -Q.values)
    with pytest.raises(ValueError, match="multiple of 6"):
        PotentialQ.from_curvature(THETA, panels=10)


def _random_kernel(rng, n=6):
    s = np.linspace(0, 1, n)
    w = np.full(n, 1.0 / n)
    return KernelMatrix(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)), s, w, s, w)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_hs_distance_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (_random_kernel(rng) for _ in range(3))
    assert hs_distance(a, a) == 0.0
    assert hs_distance(a, b) == pytest.approx(hs_distance(b, a))
    assert hs_distance(a, c) <= hs_distance(a, b) + hs_distance(b, c) + 1e-12


def test_hs_distance_grid_mismatch():
    rng = np.random.default_rng(0)
    a, b = _random_kernel(rng), _random_kernel(rng, 7)
    with pytest.raises(ValueError, match="different grids"):
        hs_distance(a, b)


def test_adjoint():
    rng = np.random.default_rng(2)
    K = _random_kernel(rng)
    f, g = rng.normal(size=6) + 0j, rng.normal(size=6) + 1j
    lhs = np.sum(K.row_weights * np.conj(g) * K.apply(f))
    rhs = np.sum(K.col_weights * np.conj(K.adjoint().apply(g)) * f)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def _convolution(z, rhs, x, L=20.0, n=400001):
    # direct quadrature of g_z * rhs on a dense uniform grid
    t = np.linspace(-L, L, n)
    ft = rhs(t)
    return np.array([np.trapezoid(free_kernel(z, xi - t) * ft, t) for xi in x])


def test_oracle_free_case_is_convolution():
    z = 0.3 + 1j
    rhs = _gauss(0.2, 0.15)
    x, u = fd_resolvent_oracle(0.1, z, rhs, 0.0, kinetic=1.0, h=2.5e-4)
    sel = np.flatnonzero(np.abs(x) < 2)[::200]
    assert np.max(np.abs(u[sel] - _convolution(z, rhs, x[sel]))) < 1e-5


def test_oracle_residual():
    z, delta = 0.3 + 1j, 0.2
    rhs = _gauss(0.0, 0.3)
    V = lambda x: -(curvature_eval(CurvatureProfile(THETA, delta), x)[0] ** 2) / 8  # noqa: E731
    for kinetic, h in ((0.5, None), (0.5, delta / 100), (1.0, delta / 100)):
        x, u = fd_resolvent_oracle(delta, z, rhs, THETA, kinetic=kinetic, h=h)
        r = _fd_residual(x, u, rhs(x), V(x), z, kinetic)
        assert np.linalg.norm(r) / np.linalg.norm(rhs(x)) < 1e-10
    # on the finest default grid with -d^2 the stencil entries reach 4 / h^2 and the residual
    # bottoms out at the rounding level of evaluating it
    x, u = fd_resolvent_oracle(delta, z, rhs, THETA, kinetic=1.0)
    h = x[1] - x[0]
    r = _fd_residual(x, u, rhs(x), V(x), z, 1.0)
    floor = np.finfo(float).eps * np.linalg.norm((4 / h**2 + abs(z) ** 2) * np.abs(u))
    assert np.linalg.norm(r) < 10 * floor


def test_oracle_second_order_refinement():
    z = 1j
    rhs = _gauss(0.0, 0.3)
    pts = np.array([-1.0, -0.3, 0.4, 1.2])
    ref = _convolution(z, rhs, pts)
    errs = []
    for h in (0.02, 0.01):
        x, u = fd_resolvent_oracle(0.1, z, rhs, 0.0, kinetic=1.0, h=h, margin=16.0)
        idx = [np.argmin(np.abs(x - p)) for p in pts]
        assert np.max(np.abs(x[idx] - pts)) < 1e-9
        errs.append(np.max(np.abs(u[idx] - ref)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_oracle_detects_reflection():
    with pytest.raises(ValueError, match="reflection"):
        fd_resolvent_oracle(0.1, 1j, _gauss(0.0, 0.3), 0.0, kinetic=1.0, margin=2.0)


def test_convergence_report(tmp_path):
    p = write_convergence_report(tmp_path / "conv.json", [0.4, 0.2], [1e-1, 5e-2], [3.0, 4.0], {"z": [0, 1]})
    data = json.loads(p.read_text())
    assert data == {"delta_values": [0.4, 0.2], "hs_distances": [0.1, 0.05], "condition_numbers": [3.0, 4.0],
                    "z": [0, 1]}
