"""Small dense matrix equations.

Two families are handled here:

* the Lyapunov-type equation ``P^t X + X P = C``, solved through the
  characteristic polynomial of ``-P``;
* the admissibility system for an operator ``A`` and a triple
  ``(psi, nu, beta)``::

      X + X^t     = nu^t nu + beta^t beta + ct psi^t psi
      X A + A^t X^t = beta^t beta - (c - ct) psi^t psi

  whose symmetric part is forced and whose antisymmetric part solves a
  linear equation on the space of antisymmetric matrices.

Everything is pure numpy; matrices are small (k <= a few dozen).
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConditioningWarning, NotAdmissibleSpectrum, SchemaError, SpectrumClash, UnlistedCase

TOL_LIN = 1e-10
CLASH_TOL = 1e-9
INVERTIBLE_RTOL = 1e-8


def _as_matrix(a, name="matrix") -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SchemaError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise SchemaError(f"{name} has non-finite entries")
    return m


def _rank_threshold(s: np.ndarray, k: int) -> float:
    smax = s[0] if s.size else 0.0
    return k * np.finfo(float).eps * smax * 1e3


# ---------------------------------------------------------------------------
# eigenstructure


@dataclass(frozen=True)
class Operator:
    """A real k x k matrix together with its eigenstructure.

    Attributes
    ----------
    entries : ndarray
        The matrix itself.
    real_eigs : list of (float, int)
        Real eigenvalues with algebraic multiplicity.
    complex_eigs : list of (complex, int)
        One representative (positive imaginary part) per conjugate pair.
    nonderogatory : bool
        True when every eigenvalue has a single Jordan block.
    """

    entries: np.ndarray
    real_eigs: list = field(default_factory=list)
    complex_eigs: list = field(default_factory=list)
    nonderogatory: bool = True

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        vals = []
        for a, m in self.real_eigs:
            vals += [complex(a)] * m
        for g, m in self.complex_eigs:
            vals += [g] * m + [np.conj(g)] * m
        return np.array(vals, dtype=complex)

    @property
    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.entries, self.entries.T, rtol=0, atol=1e-14 * (1 + np.abs(self.entries).max())))


def _cluster(eigs: np.ndarray, tol: float) -> list[tuple[complex, int]]:
    """Group eigenvalues closer than ``tol`` (single linkage)."""
    groups: list[list[complex]] = []
    for z in sorted(eigs, key=lambda w: (w.real, w.imag)):
        for g in groups:
            if min(abs(z - w) for w in g) <= tol:
                g.append(z)
                break
        else:
            groups.append([z])
    return [(complex(np.mean(g)), len(g)) for g in groups]


def analyze_operator(entries) -> Operator:
    """Compute eigenvalues, multiplicities and the nonderogatory flag.

    Eigenvalues closer than ``1e-6 * (1 + |A|)`` are merged; multiple roots
    are only accurate to roughly the square root of machine precision, so a
    tighter grouping would split genuine Jordan blocks.
    """
    a = _as_matrix(entries, "operator")
    k = a.shape[0]
    try:
        eigs = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise SchemaError(f"eigenvalue computation failed: {exc}") from exc
    scale = 1.0 + np.abs(a).max()
    groups = _cluster(eigs, 1e-6 * scale)

    real_eigs, complex_eigs = [], []
    nonderog = True
    for z, m in groups:
        if abs(z.imag) <= 1e-6 * scale:
            real_eigs.append((float(z.real), m))
            zc = complex(z.real, 0.0)
        elif z.imag > 0:
            complex_eigs.append((z, m))
            zc = z
        else:
            continue
        # geometric multiplicity via rank of (A - z I)
        s = np.linalg.svd(a.astype(complex) - zc * np.eye(k), compute_uv=False)
        nullity = int(np.sum(s <= 1e-7 * scale))
        if nullity > 1:
            nonderog = False
    return Operator(a, real_eigs, complex_eigs, nonderog)


def _ensure_operator(P) -> Operator:
    return P if isinstance(P, Operator) else analyze_operator(P)


def check_spectrum_clash(P) -> None:
    """Raise SpectrumClash when two eigenvalues of ``P`` sum to zero."""
    op = _ensure_operator(P)
    ev = np.linalg.eigvals(op.entries)
    sums = np.abs(ev[:, None] + ev[None, :])
    if sums.min() < CLASH_TOL:
        i, j = np.unravel_index(np.argmin(sums), sums.shape)
        raise SpectrumClash(f"eigenvalues {ev[i]:.6g} and {ev[j]:.6g} sum to zero")


# ---------------------------------------------------------------------------
# Lyapunov equation P^t X + X P = C


@dataclass(frozen=True)
class LyapunovPlan:
    """Precomputed pieces of the polynomial solution formula for a fixed P.

    ``X = q(P^t)^{-1} sum_l a_l sum_{i<l} (-1)^i (P^t)^{l-1-i} C P^i`` where
    ``q(x) = det(x I + P) = sum_l a_l x^l``.
    """

    P: np.ndarray
    coeffs: np.ndarray  # a_0..a_k, lowest degree first
    q_inv: np.ndarray
    condition: float

    @property
    def k(self) -> int:
        return self.P.shape[0]


def lyapunov_plan(P) -> LyapunovPlan:
    op = _ensure_operator(P)
    check_spectrum_clash(op)
    p = op.entries
    k = p.shape[0]
    coeffs = np.real(np.poly(-p))[::-1]  # a_0 .. a_k
    pt = p.T
    q = np.zeros_like(p)
    power = np.eye(k)
    for ell in range(k + 1):
        q = q + coeffs[ell] * power
        power = power @ pt
    cond = float(np.linalg.cond(q))
    if cond > 1e10:
        warnings.warn(f"q(P^t) is badly conditioned (cond={cond:.3g})", ConditioningWarning, stacklevel=3)
    return LyapunovPlan(p, coeffs, np.linalg.inv(q), cond)


def lyapunov_apply(plan: LyapunovPlan, C: np.ndarray) -> np.ndarray:
    """Evaluate the polynomial formula; ``C`` may carry leading batch axes."""
    C = np.asarray(C, dtype=float)
    k = plan.k
    p, pt = plan.P, plan.P.T
    # S_l = sum_{i<l} (-1)^i (P^t)^{l-1-i} C P^i, built recursively:
    # S_1 = C, S_{l+1} = P^t S_l + (-1)^l C P^l
    acc = np.zeros_like(C)
    s_l = C.copy()
    cp = C.copy()
    for ell in range(1, k + 1):
        if ell > 1:
            cp = cp @ p
            s_l = pt @ s_l + ((-1) ** (ell - 1)) * cp
        acc = acc + plan.coeffs[ell] * s_l
    return plan.q_inv @ acc


def solve_lyapunov(P, C) -> np.ndarray:
    """Solve ``P^t X + X P = C`` by the characteristic-polynomial formula.

    Parameters
    ----------
    P : array_like or Operator
        k x k matrix with no pair of eigenvalues summing to zero.
    C : array_like
        k x k right-hand side.

    Raises
    ------
    SpectrumClash
        If ``sigma(P)`` meets ``-sigma(P)``.
    """
    plan = lyapunov_plan(P)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape != plan.P.shape:
        raise SchemaError(f"C has shape {C.shape}, expected {plan.P.shape}")
    return lyapunov_apply(plan, C)


def solve_lyapunov_kron(P, C) -> np.ndarray:
    """Reference solver: dense solve of the vectorized equation."""
    p = np.atleast_2d(np.asarray(P, dtype=float))
    k = p.shape[0]
    eye = np.eye(k)
    # vec(P^t X) = (I kron P^t) vec X, vec(X P) = (P^t kron I) vec X (column-major vec)
    m = np.kron(eye, p.T) + np.kron(p.T, eye)
    x = np.linalg.solve(m, np.asarray(C, dtype=float).reshape(-1, order="F"))
    return x.reshape(k, k, order="F")


def lyapunov_residual(P, X, C) -> float:
    p = np.asarray(P, dtype=float)
    return float(np.abs(p.T @ X + X @ p - C).max())


# ---------------------------------------------------------------------------
# admissibility system


class Verdict(enum.Enum):
    UniqueInvertible = "UniqueInvertible"
    UniqueSingular = "UniqueSingular"
    NoSolution = "NoSolution"
    NonUnique = "NonUnique"


@dataclass(frozen=True)
class SylvesterSpec:
    """Input of the admissibility system.

    ``psi`` has shape (k,), ``nu`` (w1, k), ``beta0`` (w2, k).
    """

    A: Operator
    c: float
    c_tilde: float
    psi: np.ndarray
    nu: np.ndarray
    beta0: np.ndarray

    def __post_init__(self):
        k = self.A.dim
        psi = np.asarray(self.psi, dtype=float).reshape(-1)
        nu = np.asarray(self.nu, dtype=float).reshape(-1, k) if np.size(self.nu) else np.zeros((0, k))
        beta = np.asarray(self.beta0, dtype=float).reshape(-1, k) if np.size(self.beta0) else np.zeros((0, k))
        if psi.shape != (k,):
            raise SchemaError(f"psi must have length {k}")
        for name, arr in (("psi", psi), ("nu", nu), ("beta0", beta)):
            if not np.all(np.isfinite(arr)):
                raise SchemaError(f"{name} has non-finite entries")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "beta0", beta)

    @property
    def gram(self) -> np.ndarray:
        """``nu^t nu + beta^t beta + ct psi^t psi``."""
        return self.nu.T @ self.nu + self.beta0.T @ self.beta0 + self.c_tilde * np.outer(self.psi, self.psi)

    @property
    def rho(self) -> np.ndarray:
        """``beta^t beta - (c - ct) psi^t psi``."""
        return self.beta0.T @ self.beta0 - (self.c - self.c_tilde) * np.outer(self.psi, self.psi)


@dataclass(frozen=True)
class AdmissibilityVerdict:
    status: Verdict
    solution: np.ndarray | None
    kernel_dim: int
    residual: float = 0.0


def _antisym_basis(k: int) -> list[np.ndarray]:
    basis = []
    for i in range(k):
        for j in range(i + 1, k):
            e = np.zeros((k, k))
            e[i, j], e[j, i] = 1.0, -1.0
            basis.append(e)
    return basis


def _sym_coords(m: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(m.shape[0])
    return m[iu]


def solve_sylvester_system(spec: SylvesterSpec) -> AdmissibilityVerdict:
    """Solve the admissibility system and classify the outcome.

    The symmetric part is ``G / 2``; the antisymmetric part ``Y`` solves
    ``Y A - A^t Y = rho - (G A + A^t G) / 2`` on antisymmetric matrices, by a
    dense least-squares solve with an SVD rank test.
    """
    a = spec.A.entries
    k = a.shape[0]
    g = spec.gram
    xs = 0.5 * g
    rhs = spec.rho - 0.5 * (g @ a + a.T @ g)
    scale = 1.0 + np.abs(rhs).max() + np.abs(g).max()

    basis = _antisym_basis(k)
    if basis:
        m = np.stack([_sym_coords(e @ a - a.T @ e) for e in basis], axis=1)
        b = _sym_coords(rhs)
        u, s, vt = np.linalg.svd(m, full_matrices=False)
        thr = _rank_threshold(s, k)
        rank = int(np.sum(s > thr))
        y = vt[:rank].T @ ((u[:, :rank].T @ b) / s[:rank])
        res = float(np.abs(m @ y - b).max())
        xa = sum(c * e for c, e in zip(y, basis))
        nullity = len(basis) - rank
    else:
        xa = np.zeros((k, k))
        res = float(np.abs(_sym_coords(rhs)).max())
        nullity = 0

    if res > TOL_LIN * scale:
        return AdmissibilityVerdict(Verdict.NoSolution, None, -1, res)
    if nullity > 0:
        return AdmissibilityVerdict(Verdict.NonUnique, None, nullity, res)
    x = xs + xa
    sx = np.linalg.svd(x, compute_uv=False)
    kdim = int(np.sum(sx < INVERTIBLE_RTOL * max(sx[0], np.finfo(float).tiny)))
    if sx[0] == 0.0:
        kdim = k
    status = Verdict.UniqueInvertible if kdim == 0 else Verdict.UniqueSingular
    return AdmissibilityVerdict(status, x, kdim, res)


def sylvester_residuals(spec: SylvesterSpec, X: np.ndarray) -> tuple[float, float]:
    """Max-norm residuals of the two equations of the system."""
    a = spec.A.entries
    r1 = np.abs(X + X.T - spec.gram).max()
    r2 = np.abs(X @ a + a.T @ X.T - spec.rho).max()
    return float(r1), float(r2)


def sylvester_closed_form(spec: SylvesterSpec) -> np.ndarray:
    """Explicit solution for symmetric A with simple eigenvalues.

    In an orthonormal eigenbasis ``a_i`` of A (eigenvalues ``alpha_i``)::

        <X a_i, a_i> = G_ii / 2
        <X a_i, a_j> = (rho_ij - alpha_j G_ij) / (alpha_i - alpha_j)

    with ``G_ij = <nu a_i, nu a_j> + <beta a_i, beta a_j> + ct psi_i psi_j``
    and ``rho_ij = <beta a_i, beta a_j> - (c - ct) psi_i psi_j``.
    """
    a = spec.A.entries
    if not np.allclose(a, a.T, atol=1e-13 * (1 + np.abs(a).max()), rtol=0):
        raise SchemaError("closed form needs a symmetric operator")
    alpha, vecs = np.linalg.eigh(a)
    if np.min(np.diff(alpha), initial=np.inf) <= 1e-12 * (1 + np.abs(alpha).max()):
        raise SchemaError("closed form needs simple eigenvalues")
    g = vecs.T @ spec.gram @ vecs
    rho = vecs.T @ spec.rho @ vecs
    k = a.shape[0]
    xe = np.empty((k, k))
    # xe[j, i] = <X a_i, a_j>
    for i in range(k):
        for j in range(k):
            if i == j:
                xe[i, i] = 0.5 * g[i, i]
            else:
                xe[j, i] = (rho[i, j] - alpha[j] * g[i, j]) / (alpha[i] - alpha[j])
    return vecs @ xe @ vecs.T


# ---------------------------------------------------------------------------
# admissible eigenvalue sets


@dataclass(frozen=True)
class IntervalSet:
    """Finite union of closed intervals; endpoints may be infinite."""

    intervals: tuple[tuple[float, float], ...]

    def __contains__(self, x: float) -> bool:
        return any(lo <= x <= hi for lo, hi in self.intervals)

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return any(lo - tol <= x <= hi + tol for lo, hi in self.intervals)

    def __repr__(self) -> str:
        def fmt(t):
            return "inf" if t == math.inf else "-inf" if t == -math.inf else f"{t:g}"

        return " U ".join(f"[{fmt(lo)}, {fmt(hi)}]" for lo, hi in self.intervals) or "{}"


REAL_LINE = IntervalSet(((-math.inf, math.inf),))


def in_D(c: float, c_tilde: float) -> bool:
    """Region where every admissible triple yields an invertible solution.

    The plane minus ``{ct < 0 and ct <= c <= 0}``.
    """
    return not (c_tilde < 0 and c_tilde <= c <= 0)


def eigen_condition_coefficients(alpha: float, c: float, c_tilde: float) -> tuple[float, float, float]:
    """Coefficients of ``|beta a|^2, |nu a|^2, psi(a)^2`` in the per-eigenvector condition.

    ``(1 - alpha)|beta a|^2 - alpha |nu a|^2 - ((c - ct) + alpha ct) psi(a)^2 = 0``.
    """
    return 1.0 - alpha, -alpha, -((c - c_tilde) + alpha * c_tilde)


def admits_triple(alpha: float, c: float, c_tilde: float, w1: int = 1, w2: int = 1) -> bool:
    """Whether a nonzero triple can satisfy the per-eigenvector condition.

    Holds iff the coefficients of the components that are present and that
    actually enter the system are not all of the same strict sign.
    """
    cb, cn, cp = eigen_condition_coefficients(alpha, c, c_tilde)
    coeffs = []
    if w2 > 0:
        coeffs.append(cb)
    if w1 > 0:
        coeffs.append(cn)
    if c != 0 or c_tilde != 0:
        coeffs.append(cp)
    if not coeffs:
        return False
    return not (all(x > 0 for x in coeffs) or all(x < 0 for x in coeffs))


def z_interval(c: float, c_tilde: float, derive_unlisted: bool = False) -> IntervalSet:
    """Admissible real eigenvalues for the curvature pair ``(c, ct)``.

    With ``kappa = (ct - c) / ct``:

    ============== ==========================
    c >= ct > 0    [kappa, 1]
    0 <= c < ct    [0, 1]
    c < 0 < ct     [0, kappa]
    c < ct < 0     (-inf, kappa] U [0, inf)
    ct < 0 < c     (-inf, 1] U [kappa, inf)
    c < 0 = ct     [0, inf)
    ============== ==========================

    Outside ``D`` and at ``(0, 0)`` no constraint is imposed and the whole line
    is returned.  The pair ``ct = 0 < c`` is not in the table; it raises
    ``UnlistedCase`` unless ``derive_unlisted`` is set, in which case the set
    ``(-inf, 1]`` obtained from the sign test of the eigenvector condition
    is returned.
    """
    inf = math.inf
    if (c == 0 and c_tilde == 0) or not in_D(c, c_tilde):
        return REAL_LINE
    if c_tilde == 0:
        if c < 0:
            return IntervalSet(((0.0, inf),))
        if derive_unlisted:
            return IntervalSet(((-inf, 1.0),))
        raise UnlistedCase(f"pair c={c}, c_tilde=0 is not in the classification table")
    kappa = (c_tilde - c) / c_tilde
    if c >= c_tilde > 0:
        return IntervalSet(((kappa, 1.0),))
    if 0 <= c < c_tilde:
        return IntervalSet(((0.0, 1.0),))
    if c < 0 < c_tilde:
        return IntervalSet(((0.0, kappa),))
    if c < c_tilde < 0:
        return IntervalSet(((-inf, kappa), (0.0, inf)))
    if c_tilde < 0 < c:
        return IntervalSet(((-inf, 1.0), (kappa, inf)))
    raise UnlistedCase(f"pair ({c}, {c_tilde}) not classified")  # pragma: no cover


def _component_norms(alpha: float, c: float, c_tilde: float, w1: int, w2: int) -> tuple[float, float, float]:
    """Squared norms (|beta a|^2, |nu a|^2, psi^2) solving the eigenvector condition.

    Components with a zero coefficient are switched off unless nothing else
    can balance; positive and negative groups are balanced by rescaling the
    negative group.
    """
    cb, cn, cp = eigen_condition_coefficients(alpha, c, c_tilde)
    psi_live = c != 0 or c_tilde != 0
    present = [w2 > 0, w1 > 0, psi_live]
    coeffs = [cb, cn, cp]
    pos = [i for i in range(3) if present[i] and coeffs[i] > 0]
    neg = [i for i in range(3) if present[i] and coeffs[i] < 0]
    zero = [i for i in range(3) if present[i] and coeffs[i] == 0]
    out = [0.0, 0.0, 0.0]
    if pos and neg:
        for i in pos:
            out[i] = 1.0
        s = -sum(coeffs[i] for i in pos) / sum(coeffs[i] for i in neg)
        for i in neg:
            out[i] = s
    elif zero:
        out[zero[0]] = 1.0
    else:
        raise NotAdmissibleSpectrum(f"eigenvalue {alpha:g} admits no triple for c={c:g}, c_tilde={c_tilde:g}")
    return out[0], out[1], out[2]


def generate_admissible_triple(A, c: float, c_tilde: float, w1: int, w2: int, rng=None):
    """Build ``(psi, nu, beta0)`` making the admissibility system uniquely invertible.

    Only symmetric operators with simple eigenvalues are supported.  Each
    eigenvector receives a triple solving the eigenvector condition; with
    ``rng`` the directions in ``R^w1`` and ``R^w2`` are random, otherwise
    coordinate axes are used.

    Returns
    -------
    psi : (k,) ndarray
    nu : (w1, k) ndarray
    beta0 : (w2, k) ndarray
    """
    op = _ensure_operator(A)
    a = op.entries
    if not op.is_symmetric:
        raise SchemaError("generate_admissible_triple needs a symmetric operator")
    alpha, vecs = np.linalg.eigh(0.5 * (a + a.T))
    if np.min(np.diff(alpha), initial=np.inf) <= 1e-12 * (1 + np.abs(alpha).max()):
        raise SchemaError("eigenvalues must be simple")
    if in_D(c, c_tilde) and not (c == 0 and c_tilde == 0):
        z = z_interval(c, c_tilde, derive_unlisted=True)
        bad = [x for x in alpha if x not in z]
        if bad:
            raise NotAdmissibleSpectrum(f"eigenvalues {bad} lie outside {z!r}")
    k = a.shape[0]
    psi = np.zeros(k)
    nu = np.zeros((w1, k))
    beta = np.zeros((w2, k))

    def direction(w, i):
        if rng is None:
            d = np.zeros(w)
            d[i % w] = 1.0
            return d
        d = rng.standard_normal(w)
        return d / np.linalg.norm(d)

    for i, al in enumerate(alpha):
        nb, nn, npsi = _component_norms(al, c, c_tilde, w1, w2)
        ai = vecs[:, i]
        sgn = 1.0 if rng is None else rng.choice([-1.0, 1.0])
        psi += sgn * math.sqrt(npsi) * ai
        if w1:
            nu += math.sqrt(nn) * np.outer(direction(w1, i), ai)
        if w2:
            beta += math.sqrt(nb) * np.outer(direction(w2, i), ai)
    return psi, nu, beta
