import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from vribaucour import vacuum as V
from vribaucour.errors import SchemaError, SingularOperator
from vribaucour.geomgrid import Grid, check_sphere_containment, numeric_sectional_curvature, residual_system
from vribaucour.lagrangian import integrate_system_P, lyapunov_omega, omega_cross_check
from vribaucour.matrixeq import SylvesterSpec, Verdict, analyze_operator, generate_admissible_triple, solve_sylvester_system
from vribaucour.ribaucour import (
    CombescureData,
    OmegaField,
    apply_vectorial_ribaucour,
    frame_change,
    frame_gram_residual,
    integrate_L_transform,
    integrate_omega,
    integrate_system_R,
    integrate_system_Rstar,
    inverse_transform_data,
    omega_gram_residual,
    omega_L_residual,
    singular_ratio,
    slab_bounds,
    small_inv,
    transform_in_slabs,
    transformed_principal_data,
)
from vribaucour.seeds import clifford_torus, sphere_torus


def admissible(data, L, seed=3):
    A = analyze_operator(L)
    triple = generate_admissible_triple(A, data.c, data.c_tilde, data.n, data.p, np.random.default_rng(seed))
    verdict = solve_sylvester_system(SylvesterSpec(A, data.c, data.c_tilde, *triple))
    assert verdict.status is Verdict.UniqueInvertible
    return A, triple, verdict.solution


@pytest.fixture(scope="module")
def torus_run():
    """Two-dimensional L-transform of the flat torus in the unit sphere."""
    g = Grid.cube(2, 0.5, 0.01)
    s = sphere_torus(g)
    A, triple, X = admissible(s.data, np.diag([0.3, 0.6]))
    comb, om = integrate_L_transform(s.data, A, triple, X, substeps=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fr, d = transform_in_slabs(s.frame, s.data, comb, om, with_frame=True)
    return s, comb, om, fr, d


@pytest.fixture(scope="module")
def clifford_run():
    g = Grid.cube(2, 0.5, 0.01)
    s = clifford_torus(g)
    A, triple, X = admissible(s.data, [[0.5]], seed=1)
    comb, om = integrate_L_transform(s.data, A, triple, X, substeps=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fr, d = transform_in_slabs(s.frame, s.data, comb, om, with_frame=True)
    return s, comb, om, fr, d


# ---------------------------------------------------------------------------
# linear systems


def test_zero_initial_data_stay_zero():
    g = Grid.cube(2, 0.5, 0.05)
    s = clifford_torus(g)
    comb = integrate_system_R(s.data, [[0.5]], (np.zeros(1), np.zeros((2, 1)), np.zeros((2, 1))))
    assert not np.any(comb.phi) and not np.any(comb.gamma) and not np.any(comb.beta)
    st_ = sphere_torus(g)
    comb = integrate_system_Rstar(st_.data, [[0.5]], init=(np.zeros(1), np.zeros((2, 1)), np.zeros((1, 1))))
    assert not np.any(comb.phi) and not np.any(comb.gamma) and not np.any(comb.beta)


def test_singular_operator_rejected():
    s = clifford_torus(Grid.cube(2, 0.5, 0.1))
    with pytest.raises(SingularOperator):
        integrate_system_R(s.data, [[0.0]], (np.zeros(1), np.zeros((2, 1)), np.zeros((2, 1))))


@pytest.mark.parametrize("L", [0.5, 0.8])
def test_system_R_on_the_vacuum_decouples(L):
    # along axis i: gamma_i' = -mu^2 beta^i, beta^i' = -gamma_i with mu^2 = 1/L - 1;
    # phi only moves along u_1 (v_1 = 1, v_j = 0)
    g = Grid.cube(2, 1.0, 0.01)
    s = V.vacuum_seed(2, g)
    phi0, g0, b0 = np.array([0.4]), np.array([[1.0], [-0.5]]), np.array([[0.3], [0.7]])
    comb = integrate_system_R(s.data, [[L]], (phi0, g0, b0))
    mu = np.sqrt(1 / L - 1)
    u = g.coords()
    for i in range(2):
        gam = g0[i, 0] * np.cosh(mu * u[i]) - mu * b0[i, 0] * np.sinh(mu * u[i])
        bet = b0[i, 0] * np.cosh(mu * u[i]) - g0[i, 0] / mu * np.sinh(mu * u[i])
        assert np.abs(comb.gamma[i, ..., 0] - gam).max() < 1e-8
        assert np.abs(comb.beta[i, ..., 0] - bet).max() < 1e-8
    phi = phi0[0] + g0[0, 0] / mu * np.sinh(mu * u[0]) - b0[0, 0] * (np.cosh(mu * u[0]) - 1) + 0 * u[1]
    assert np.abs(comb.phi[..., 0] - phi).max() < 1e-8


def test_system_Rstar_single_axis_matches_expm():
    # sphere torus: v, h, V constant, so each axis is a constant-coefficient ODE
    g = Grid.cube(2, 0.5, 0.01)
    s = sphere_torus(g)
    d = s.data
    L = 0.4
    init = (np.array([0.3]), np.array([[1.0], [0.2]]), np.array([[-0.6]]))
    comb = integrate_system_Rstar(d, [[L]], init=init)
    v1 = float(d.v[0].flat[0])
    V11 = float(d.V[0, 0].flat[0])
    c, ct = d.c, d.c_tilde
    a = (1 / L) * (c - ct) + ct
    # state (phi, gamma_1, gamma_2, beta^1) along axis 0
    M = np.zeros((4, 4))
    M[0, 1] = v1
    M[1, 3] = -(1 / L - 1) * V11
    M[1, 0] = -a * v1
    M[3, 1] = -V11
    y0 = np.array([0.3, 1.0, 0.2, -0.6])
    c0 = g.center_index
    for idx in (0, 17, g.shape[0] - 1):
        t = g.axis(0)[idx]
        y = expm(t * M) @ y0
        got = np.array([comb.phi[idx, c0[1], 0], comb.gamma[0, idx, c0[1], 0], comb.gamma[1, idx, c0[1], 0], comb.beta[0, idx, c0[1], 0]])
        assert np.abs(got - y).max() < 1e-8


@pytest.mark.parametrize("which", ["R", "Rstar"])
def test_mixed_partials_commute(which):
    g = Grid.cube(2, 0.5, 0.01)
    if which == "R":
        s = clifford_torus(g)
        init = (np.array([0.3, -0.2]), np.array([[1.0, 0.1], [0.2, 0.5]]), np.array([[0.4, 0.0], [-0.3, 0.9]]))
        run = lambda o: integrate_system_R(s.data, np.diag([0.3, 0.7]), init, order=o)
    else:
        s = sphere_torus(g)
        init = (np.array([0.3, -0.2]), np.array([[1.0, 0.1], [0.2, 0.5]]), np.array([[0.4, 0.0]]))
        run = lambda o: integrate_system_Rstar(s.data, np.diag([0.3, 0.7]), init=init, order=o)
    a, b = run((0, 1)), run((1, 0))
    for name in ("phi", "gamma", "beta"):
        assert np.abs(getattr(a, name) - getattr(b, name)).max() < 1e-8


# ---------------------------------------------------------------------------
# Omega


def test_omega_is_constant_where_gamma_vanishes():
    # gamma_2 = beta^2 = 0 initially stays zero on the vacuum, so d_2 Omega = 0
    g = Grid.cube(2, 0.5, 0.02)
    s = V.vacuum_seed(2, g)
    init = (np.array([0.4]), np.array([[1.0], [0.0]]), np.array([[0.3], [0.0]]))
    comb, om = integrate_L_transform(s.data, [[0.5]], init, [[0.5 * (1 + 0.09)]])
    assert not np.any(comb.gamma[1])
    assert np.abs(np.diff(om.Omega, axis=1)).max() == 0.0


@pytest.mark.parametrize("n", [2, 3])
def test_omega_integration_matches_lyapunov(n):
    g = Grid.cube(n, 0.5, 0.02)
    s = V.vacuum_seed(n, g)
    spec = V.nondiag_spec(n)
    comb = integrate_system_P(s.data, spec)
    om = lyapunov_omega(comb, spec)
    assert omega_cross_check(s.data, comb, om) < 1e-8


def test_omega_path_independence(torus_run):
    s, comb, om, _, _ = torus_run
    a = integrate_omega(comb, s.data, om.base_value, order=(0, 1))
    b = integrate_omega(comb, s.data, om.base_value, order=(1, 0))
    assert np.abs(a.Omega - b.Omega).max() < 1e-8
    assert np.abs(a.Omega - om.Omega).max() < 1e-8


@pytest.mark.parametrize("run", ["torus_run", "clifford_run"])
def test_structural_invariants(run, request):
    s, comb, om, fr, d = request.getfixturevalue(run)
    m = d.active
    assert omega_gram_residual(comb, om, m) < 1e-8
    assert omega_L_residual(comb, om, mask=m) < 1e-8
    assert frame_gram_residual(fr, comb, om, m) < 1e-8


def test_small_inverse_and_singular_ratio(rng):
    M = rng.standard_normal((7, 5, 3, 3))
    np.testing.assert_allclose(small_inv(M) @ M, np.broadcast_to(np.eye(3), M.shape), atol=1e-8)
    r = singular_ratio(np.array([[[1.0, 0.0], [0.0, 1e-12]], [[2.0, 0.0], [0.0, 1.0]]]))
    np.testing.assert_allclose(r, [1e-12, 0.5])
    assert not OmegaField(np.zeros((2, 1, 1)), np.zeros((1, 1))).active.any()


@given(st.integers(3, 400), st.integers(1, 50))
def test_slab_bounds_cover(length, slab):
    b = slab_bounds(length, slab)
    assert b[0][0] == 0 and b[-1][1] == length
    assert all(x[1] == y[0] for x, y in zip(b, b[1:]))
    assert all(hi - lo >= 3 for lo, hi in b)


# ---------------------------------------------------------------------------
# transform


def test_zero_phi_leaves_f_and_data_unchanged():
    g = Grid.cube(2, 0.5, 0.05)
    s = sphere_torus(g)
    k = 2
    comb = CombescureData(
        np.zeros(g.shape + (k,)),
        np.zeros((2,) + g.shape + (k,)),
        np.zeros((1,) + g.shape + (k,)),
        analyze_operator(np.diag([0.3, 0.6])),
        s.data.c,
        s.data.c_tilde,
    )
    om = OmegaField(np.broadcast_to(np.eye(k), g.shape + (k, k)), np.eye(k))
    fr = apply_vectorial_ribaucour(s.frame, comb, om)
    assert np.array_equal(fr.f, s.frame.f)
    d = transformed_principal_data(s.data, comb, om)
    assert np.array_equal(d.v, s.data.v) and np.array_equal(d.h, s.data.h)
    np.testing.assert_array_equal(d.V, s.data.V)


def test_frame_change_is_orthogonal(torus_run):
    _, comb, om, _, _ = torus_run
    Q = frame_change(comb, om)[::20, ::20]
    eye = np.eye(Q.shape[-1])
    assert np.abs(np.swapaxes(Q, -1, -2) @ Q - eye).max() < 1e-8


def test_slabbed_transform_equals_whole_grid(torus_run):
    s, comb, om, fr, d = torus_run
    sl = (slice(40, 49),)
    from vribaucour.ribaucour import slab_comb, slab_data, slab_frame, slab_omega

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        whole = apply_vectorial_ribaucour(slab_frame(s.frame, 40, 49), slab_comb(comb, 40, 49), slab_omega(om, 40, 49))
        wd = transformed_principal_data(slab_data(s.data, 40, 49), slab_comb(comb, 40, 49), slab_omega(om, 40, 49))
    assert np.array_equal(whole.f, fr.f[sl])
    assert np.array_equal(wd.v, d.v[:, 40:49])


@pytest.mark.parametrize("run", ["torus_run", "clifford_run"])
def test_transformed_data_solve_the_system(run, request):
    s, comb, om, fr, d = request.getfixturevalue(run)
    assert d.active.mean() > 0.2
    assert residual_system(d).max < 1e-6


def test_transform_stays_in_sphere_and_keeps_curvature(torus_run):
    s, comb, om, fr, d = torus_run
    assert check_sphere_containment(fr, d.active) < 1e-10
    K, valid = numeric_sectional_curvature(d)
    assert valid.any()
    assert np.abs(K[0, 1][valid] - s.data.c).max() < 1e-3


def test_scalar_vacuum_transform_stays_in_sphere(quiet):
    g = Grid.cube(2, 1.0, 0.02)
    s = V.vacuum_seed(2, g)
    spec = V.scalar_spec(1.0, 2)
    comb = integrate_system_P(s.data, spec)
    om = lyapunov_omega(comb, spec)
    d = transformed_principal_data(s.data, comb, om)
    assert check_sphere_containment(d) < 1e-10
    fr = apply_vectorial_ribaucour(s.frame, comb, om, with_frame=False)
    assert np.abs(fr.f - V.scalar_P_closed_form(1.0, g).f)[d.active].max() < 1e-8


def test_comb_needs_operator_for_data():
    g = Grid.cube(2, 0.5, 0.1)
    s = sphere_torus(g)
    comb = CombescureData(np.zeros(g.shape + (1,)), np.zeros((2,) + g.shape + (1,)), np.zeros((1,) + g.shape + (1,)))
    om = OmegaField(np.ones(g.shape + (1, 1)), np.ones((1, 1)))
    with pytest.raises(SchemaError):
        transformed_principal_data(s.data, comb, om)


# ---------------------------------------------------------------------------
# inverse


@pytest.mark.parametrize("run", ["torus_run", "clifford_run"])
def test_inverse_round_trip(run, request):
    s, comb, om, fr, d = request.getfixturevalue(run)
    icomb, iom = inverse_transform_data(comb, om, fr)
    np.testing.assert_array_equal(iom.base_value, np.linalg.inv(om.base_value))
    np.testing.assert_allclose(icomb.L.entries, comb.L.entries.T)
    back = apply_vectorial_ribaucour(fr, icomb, iom, with_frame=True)
    m = back.active
    assert np.abs(back.f - s.frame.f)[m].max() < 1e-8
    assert np.abs(back.X - s.frame.X)[:, m].max() < 1e-8
    # the inverse data satisfy the L^t-transform relation
    assert omega_L_residual(icomb, iom, mask=m) < 1e-8
    assert omega_gram_residual(icomb, iom, m) < 1e-8
