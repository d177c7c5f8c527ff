import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from vribaucour.errors import NotAdmissibleSpectrum, SchemaError, SpectrumClash, UnlistedCase
from vribaucour.matrixeq import (
    REAL_LINE,
    SylvesterSpec,
    Verdict,
    admits_triple,
    analyze_operator,
    generate_admissible_triple,
    in_D,
    lyapunov_residual,
    solve_lyapunov,
    solve_lyapunov_kron,
    solve_sylvester_system,
    sylvester_closed_form,
    sylvester_residuals,
    z_interval,
)

NONDIAG = [[1.0, 1.0], [-1.0, 1.0]]


def shifted_matrix(rng, k):
    """Random matrix whose spectrum lies in Re > 0.5, so no two eigenvalues cancel."""
    p = rng.standard_normal((k, k))
    shift = 0.5 - np.linalg.eigvals(p).real.min()
    return p + max(shift, 0.0) * np.eye(k)


def symmetric_distinct(rng, k, lo=0.05, hi=0.95):
    alpha = np.sort(rng.uniform(lo, hi, k))
    while np.min(np.diff(alpha)) < 0.05:
        alpha = np.sort(rng.uniform(lo, hi, k))
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return q @ np.diag(alpha) @ q.T


# ---------------------------------------------------------------------------
# analyze_operator


def test_identity_is_derogatory():
    op = analyze_operator(np.eye(2))
    assert op.real_eigs == [(1.0, 2)]
    assert op.complex_eigs == []
    assert not op.nonderogatory


def test_rotation_scaling_has_simple_complex_pair():
    op = analyze_operator(NONDIAG)
    assert op.real_eigs == []
    assert len(op.complex_eigs) == 1
    z, m = op.complex_eigs[0]
    assert m == 1
    assert abs(z - (1 + 1j)) < 1e-12
    assert op.nonderogatory


def test_companion_matrix_is_nonderogatory(rng):
    coeffs = rng.standard_normal(5)
    comp = np.zeros((5, 5))
    comp[1:, :-1] = np.eye(4)
    comp[:, -1] = -coeffs
    op = analyze_operator(comp)
    assert op.nonderogatory
    # independent rank test: rank(A - lambda I) = k - 1 for every eigenvalue
    for lam in np.linalg.eigvals(comp):
        assert np.linalg.matrix_rank(comp - lam * np.eye(5), tol=1e-8) == 4


def test_jordan_block_is_nonderogatory_and_merged():
    op = analyze_operator([[2.0, 1.0], [0.0, 2.0]])
    assert op.real_eigs == [(2.0, 2)]
    assert op.nonderogatory


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_multiplicities_sum_to_dimension(k, seed):
    a = np.random.default_rng(seed).standard_normal((k, k))
    op = analyze_operator(a)
    total = sum(m for _, m in op.real_eigs) + 2 * sum(m for _, m in op.complex_eigs)
    assert total == k
    assert op.eigenvalues.shape == (k,)


def test_non_square_rejected():
    with pytest.raises(SchemaError):
        analyze_operator(np.ones((2, 3)))


# ---------------------------------------------------------------------------
# Lyapunov equation


def test_lyapunov_scalar():
    assert solve_lyapunov([[2.0]], [[8.0]]) == pytest.approx(np.array([[2.0]]))


def test_lyapunov_nondiagonal_instance():
    x = solve_lyapunov(NONDIAG, [[2.0, 2.0], [4.0, 4.0]])
    np.testing.assert_allclose(x, [[2.0, 0.5], [1.5, 1.0]], atol=1e-12)


def test_lyapunov_matches_dense_solvers(rng):
    p = shifted_matrix(rng, 4)
    c = rng.standard_normal((4, 4))
    x = solve_lyapunov(p, c)
    np.testing.assert_allclose(x, solve_lyapunov_kron(p, c), atol=1e-10)
    # scipy solves A X + X A^H = Q; with A = P^t this is our equation
    np.testing.assert_allclose(x, sla.solve_continuous_lyapunov(p.T, c), atol=1e-10)


def test_lyapunov_spectrum_clash():
    with pytest.raises(SpectrumClash):
        solve_lyapunov(np.diag([1.0, -1.0]), np.eye(2))
    with pytest.raises(SpectrumClash):
        solve_lyapunov([[0.0, 1.0], [-1.0, 0.0]], np.eye(2))


def test_lyapunov_shape_mismatch():
    with pytest.raises(SchemaError):
        solve_lyapunov(np.eye(2), np.eye(3))


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_lyapunov_residual_property(k, seed):
    rng = np.random.default_rng(seed)
    p = shifted_matrix(rng, k)
    c = rng.standard_normal((k, k))
    x = solve_lyapunov(p, c)
    assert lyapunov_residual(p, x, c) <= 1e-10 * (1 + np.abs(c).max())
    np.testing.assert_allclose(x, solve_lyapunov_kron(p, c), atol=1e-10)


@pytest.mark.parametrize("y", [[1.0, 0.7], [1.0, 0.0], [0.0, 2.0]])
def test_lyapunov_invertible_iff_y_meets_every_eigenline(y):
    # C = (P^2 + I) y y^t P with P diagonal: X_ij = (1 + p_i^2) p_j y_i y_j / (p_i + p_j),
    # whose determinant is (1+p1^2)(1+p2^2)(p1-p2)^2 y1^2 y2^2 / (4 (p1+p2)^2)
    p = np.diag([1.0, 2.0])
    y = np.array(y)
    c = (p @ p + np.eye(2)) @ np.outer(y, y) @ p
    x = solve_lyapunov(p, c)
    expected = 5.0 * 2.0 * 1.0 * y[0] ** 2 * y[1] ** 2 / (4 * 9.0)
    assert np.linalg.det(x) == pytest.approx(expected, abs=1e-14)
    assert (abs(np.linalg.det(x)) > 1e-12) == bool(np.all(y != 0))


# ---------------------------------------------------------------------------
# admissibility system


def test_sylvester_scalar_example():
    spec = SylvesterSpec(analyze_operator([[0.5]]), 0.0, 0.0, [0.0], [[1.0]], [[1.0]])
    verdict = solve_sylvester_system(spec)
    assert verdict.status is Verdict.UniqueInvertible
    assert verdict.kernel_dim == 0
    np.testing.assert_allclose(verdict.solution, [[1.0]], atol=1e-14)


def test_sylvester_diagonal_off_diagonal_formula():
    a1, a2 = 0.25, 0.75
    A = analyze_operator(np.diag([a1, a2]))
    psi, nu, beta = generate_admissible_triple(A, 0.0, 1.0, 2, 2, np.random.default_rng(5))
    spec = SylvesterSpec(A, 0.0, 1.0, psi, nu, beta)
    x = solve_sylvester_system(spec).solution
    g, rho = spec.gram, spec.rho
    # eigenvectors are e1, e2: <X e_i, e_j> = X[j, i]
    assert x[1, 0] == pytest.approx((rho[0, 1] - a2 * g[0, 1]) / (a1 - a2), abs=1e-12)
    assert x[0, 1] == pytest.approx((rho[1, 0] - a1 * g[1, 0]) / (a2 - a1), abs=1e-12)
    assert x[0, 0] == pytest.approx(g[0, 0] / 2, abs=1e-14)


def test_sylvester_random_three_by_three_matches_dense_oracle(rng):
    A = analyze_operator(symmetric_distinct(rng, 3))
    psi, nu, beta = generate_admissible_triple(A, 0.0, 1.0, 2, 3, rng)
    spec = SylvesterSpec(A, 0.0, 1.0, psi, nu, beta)
    verdict = solve_sylvester_system(spec)
    assert verdict.status is Verdict.UniqueInvertible
    # full vectorized least-squares solve of both equations for all k^2 unknowns
    k, a = 3, A.entries
    eye = np.eye(k)
    swap = np.zeros((k * k, k * k))
    for i in range(k):
        for j in range(k):
            swap[i * k + j, j * k + i] = 1.0
    m1 = np.eye(k * k) + swap  # X + X^t (row-major vec)
    m2 = np.kron(eye, a.T) + np.kron(a.T, eye) @ swap  # X A + A^t X^t
    m = np.vstack([m1, m2])
    b = np.concatenate([spec.gram.ravel(), spec.rho.ravel()])
    sol, _, rank, _ = np.linalg.lstsq(m, b, rcond=None)
    assert rank == k * k
    np.testing.assert_allclose(verdict.solution, sol.reshape(k, k), atol=1e-10)


@given(st.integers(2, 5), st.integers(0, 2**31 - 1), st.sampled_from([(0.0, 1.0), (1.0, 1.0), (0.0, 0.0), (-1.0, 0.0)]))
def test_sylvester_unique_invertible_matches_closed_form(k, seed, curv):
    rng = np.random.default_rng(seed)
    c, ct = curv
    lo, hi = (0.05, 0.95) if ct > 0 or c == ct == 0 else (0.05, 3.0)
    A = analyze_operator(symmetric_distinct(rng, k, lo, hi))
    psi, nu, beta = generate_admissible_triple(A, c, ct, 2, 2, rng)
    spec = SylvesterSpec(A, c, ct, psi, nu, beta)
    verdict = solve_sylvester_system(spec)
    assert verdict.status is Verdict.UniqueInvertible
    assert verdict.kernel_dim == 0
    r1, r2 = sylvester_residuals(spec, verdict.solution)
    assert r1 <= 1e-10 and r2 <= 1e-10
    np.testing.assert_allclose(verdict.solution, sylvester_closed_form(spec), atol=1e-10)


def test_singular_instance_kernel_is_invariant():
    # triple vanishing on the second eigenvector: X = diag(x1, 0)
    A = analyze_operator(np.diag([1 / 3, 2 / 3]))
    c, ct = 0.0, 1.0
    assert in_D(c, ct)
    psi, nu, beta = generate_admissible_triple(analyze_operator([[1 / 3]]), c, ct, 1, 1)
    spec = SylvesterSpec(A, c, ct, [psi[0], 0.0], [[nu[0, 0], 0.0]], [[beta[0, 0], 0.0]])
    verdict = solve_sylvester_system(spec)
    assert verdict.status is Verdict.UniqueSingular
    assert verdict.kernel_dim == 1
    x = verdict.solution
    _, s, vt = np.linalg.svd(x)
    ker = vt[-1]
    assert s[-1] < 1e-12
    assert np.abs(x.T @ ker).max() < 1e-12  # ker X = ker X^t
    # the kernel lies where the triple vanishes and is A-invariant
    assert abs(spec.psi @ ker) < 1e-12
    assert np.abs(spec.nu @ ker).max() < 1e-12 and np.abs(spec.beta0 @ ker).max() < 1e-12
    image = A.entries @ ker
    assert np.linalg.norm(image - (image @ ker) * ker) < 1e-12


@given(st.integers(0, 2**31 - 1))
def test_inadmissible_eigenvalue_gives_no_invertible_solution(seed):
    # c = 0, ct = 1: Z = [0, 1]; alpha = 2 forces 2 nu^2 + beta^2 + psi^2 = 0
    rng = np.random.default_rng(seed)
    A = analyze_operator(np.diag([2.0, 0.5]))
    spec = SylvesterSpec(A, 0.0, 1.0, rng.standard_normal(2), rng.standard_normal((1, 2)), rng.standard_normal((2, 2)))
    verdict = solve_sylvester_system(spec)
    assert verdict.status in (Verdict.NoSolution, Verdict.UniqueSingular)
    assert verdict.kernel_dim != 0


def test_zero_triple_is_singular():
    spec = SylvesterSpec(analyze_operator([[2.0]]), 0.0, 1.0, [0.0], [[0.0]], [[0.0]])
    verdict = solve_sylvester_system(spec)
    assert verdict.status is Verdict.UniqueSingular
    assert verdict.kernel_dim == 1


def test_derogatory_operator_is_not_unique():
    spec = SylvesterSpec(analyze_operator(0.5 * np.eye(2)), 0.0, 0.0, [0.0, 0.0], [[1.0, 0.0]], [[1.0, 0.0]])
    verdict = solve_sylvester_system(spec)
    assert verdict.status is Verdict.NonUnique
    assert verdict.solution is None


@given(st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_verdict_invariants(k, seed):
    rng = np.random.default_rng(seed)
    A = analyze_operator(rng.standard_normal((k, k)))
    spec = SylvesterSpec(A, rng.uniform(-1, 1), rng.uniform(-1, 1), rng.standard_normal(k), rng.standard_normal((1, k)), rng.standard_normal((2, k)))
    v = solve_sylvester_system(spec)
    has_solution = v.status in (Verdict.UniqueInvertible, Verdict.UniqueSingular)
    assert (v.solution is not None) == has_solution
    assert (v.kernel_dim == 0) == (v.status is Verdict.UniqueInvertible)


def test_spec_rejects_bad_shapes():
    with pytest.raises(SchemaError):
        SylvesterSpec(analyze_operator(np.eye(2)), 0.0, 0.0, [0.0], [[1.0, 0.0]], [[1.0, 0.0]])
    with pytest.raises(SchemaError):
        SylvesterSpec(analyze_operator([[0.5]]), 0.0, 0.0, [np.nan], [[1.0]], [[1.0]])


# ---------------------------------------------------------------------------
# admissible eigenvalue sets


def test_z_interval_table():
    assert z_interval(2.0, 1.0).intervals == ((-1.0, 1.0),)
    assert z_interval(-1.0, 0.0).intervals == ((0.0, math.inf),)
    assert z_interval(1.5, 1.5).intervals == ((0.0, 1.0),)
    assert z_interval(0.5, 2.0).intervals == ((0.0, 1.0),)
    assert z_interval(-1.0, 1.0).intervals == ((0.0, 2.0),)
    assert z_interval(-2.0, -1.0).intervals == ((-math.inf, -1.0), (0.0, math.inf))
    assert z_interval(1.0, -1.0).intervals == ((-math.inf, 1.0), (2.0, math.inf))


def test_z_interval_whole_line_cases():
    assert z_interval(0.0, 0.0) == REAL_LINE
    assert not in_D(-0.5, -1.0)
    assert z_interval(-0.5, -1.0) == REAL_LINE


def test_z_interval_unlisted_case():
    with pytest.raises(UnlistedCase):
        z_interval(1.0, 0.0)
    assert z_interval(1.0, 0.0, derive_unlisted=True).intervals == ((-math.inf, 1.0),)


@given(
    st.floats(-3, 3, allow_nan=False).filter(lambda x: abs(x) > 1e-3),
    st.floats(-3, 3, allow_nan=False).filter(lambda x: abs(x) > 1e-3),
    st.floats(-4, 4, allow_nan=False),
)
def test_z_interval_agrees_with_sign_test(c, ct, alpha):
    # away from the boundary, membership in Z equals solvability of the
    # per-eigenvector condition with all three components available
    if not in_D(c, ct):
        return
    z = z_interval(c, ct)
    interior = z.contains(alpha, -1e-6) or not z.contains(alpha, 1e-6)
    if interior:
        assert (alpha in z) == admits_triple(alpha, c, ct, 1, 1)


def test_generate_triple_scalar_flat():
    psi, nu, beta = generate_admissible_triple(analyze_operator([[0.5]]), 0.0, 0.0, 1, 1)
    assert psi == pytest.approx([0.0])
    assert abs(nu[0, 0]) == pytest.approx(1.0)
    assert abs(beta[0, 0]) == pytest.approx(1.0)


def test_generate_triple_curved_has_full_components():
    A = analyze_operator(np.diag([1 / 3, 2 / 3]))
    psi, nu, beta = generate_admissible_triple(A, 0.0, 1.0, 1, 1)
    for i in range(2):
        assert abs(psi[i]) > 0 and abs(nu[0, i]) > 0 and abs(beta[0, i]) > 0
    verdict = solve_sylvester_system(SylvesterSpec(A, 0.0, 1.0, psi, nu, beta))
    assert verdict.status is Verdict.UniqueInvertible


def test_generate_triple_rejects_eigenvalue_outside_z():
    with pytest.raises(NotAdmissibleSpectrum):
        generate_admissible_triple(analyze_operator([[2.0]]), 1.0, 2.0, 1, 1)


def test_generate_triple_rejects_nonsymmetric():
    with pytest.raises(SchemaError):
        generate_admissible_triple(analyze_operator(NONDIAG), 0.0, 0.0, 1, 1)
