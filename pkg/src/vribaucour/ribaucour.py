"""Vectorial Ribaucour transforms and L-transforms of constant-curvature submanifolds.

Notation used throughout
------------------------
``phi`` is a map into ``R^k``; ``gamma_i = v_i^{-1} d_i phi`` are its frame
components; ``beta^r`` are the components of the normal part along
``xi_r``.  The Combescure map is

    G(w) = sum_i <gamma_i, w> X_i + sum_r <beta^r, w> xi_r + ct <phi, w> f

(the last term only in a sphere, where ``|f|^2 = 1/ct``), and ``Omega``
satisfies ``Omega + Omega^t = G^t G``, ``dOmega = G^t dG``.  The transform is

    f~ = f - G Omega^{-1} phi.

An L-transform additionally satisfies ``Omega L + L^t Omega^t = rho`` with
``rho = beta^t beta - (c - ct) phi phi^t``; the data then solve the linear
system below (``c = ct``) or its curved variant (``c != ct``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import SchemaError, SingularOperator
from .geomgrid import ImmersionField, Kind, PrincipalData, inner
from .matrixeq import INVERTIBLE_RTOL, Operator, analyze_operator
from .sweep import Field, rk4_sweep

V_MIN = 1e-6


# ---------------------------------------------------------------------------
# data containers


@dataclass(frozen=True)
class CombescureData:
    """Solution ``(phi, gamma, beta)`` of the linear system on a grid.

    Shapes: ``phi`` (*grid, k), ``gamma`` (n, *grid, k), ``beta`` (p, *grid, k).
    """

    phi: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    L: Operator | None = None
    c: float = 0.0
    c_tilde: float = 0.0
    active: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.phi.shape[-1]

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    def components(self) -> np.ndarray:
        """Rows of the Combescure map in the frame basis: shape (*grid, N_E, k).

        Order: ``gamma_1..gamma_n, beta^1..beta^p`` and ``sqrt(ct) phi`` in a
        sphere.
        """
        rows = [np.moveaxis(self.gamma, 0, -2), np.moveaxis(self.beta, 0, -2)]
        if self.c_tilde > 0:
            rows.append(np.sqrt(self.c_tilde) * self.phi[..., None, :])
        return np.concatenate(rows, axis=-2)

    def gram(self) -> np.ndarray:
        """``G^t G = sum gamma gamma^t + sum beta beta^t + ct phi phi^t``."""
        g = gram_matrix(self.gamma) + gram_matrix(self.beta)
        if self.c_tilde != 0:
            g += self.c_tilde * gram_matrix(self.phi[None])
        return g

    def rho(self) -> np.ndarray:
        """``beta^t beta - (c - ct) phi phi^t``."""
        r = gram_matrix(self.beta)
        if self.c != self.c_tilde:
            r -= (self.c - self.c_tilde) * gram_matrix(self.phi[None])
        return r


def gram_entry(vectors: np.ndarray, a: int, b: int) -> np.ndarray:
    """``sum_i vectors[i][..., a] * vectors[i][..., b]``."""
    out = vectors[0, ..., a] * vectors[0, ..., b]
    for i in range(1, vectors.shape[0]):
        out += vectors[i, ..., a] * vectors[i, ..., b]
    return out


def gram_matrix(vectors: np.ndarray) -> np.ndarray:
    """``sum_i vectors[i] vectors[i]^t`` for ``vectors`` of shape (m, *grid, k)."""
    k = vectors.shape[-1]
    out = np.empty(vectors.shape[1:] + (k,))
    for a in range(k):
        for b in range(a, k):
            out[..., a, b] = gram_entry(vectors, a, b)
            out[..., b, a] = out[..., a, b]
    return out


@dataclass(frozen=True)
class OmegaField:
    """Grid field of k x k matrices with its base value and invertibility report."""

    Omega: np.ndarray
    base_value: np.ndarray
    sigma_ratio: np.ndarray | None = None

    @property
    def active(self) -> np.ndarray:
        r = self.sigma_ratio if self.sigma_ratio is not None else singular_ratio(self.Omega)
        return r >= INVERTIBLE_RTOL

    def inverse(self) -> np.ndarray:
        """``Omega^{-1}`` (identity on singular nodes), computed once and cached."""
        cached = self.__dict__.get("_inverse")
        if cached is None:
            cached = _safe_inv(self.Omega, self.active)
            object.__setattr__(self, "_inverse", cached)
        return cached


def singular_ratio(M: np.ndarray) -> np.ndarray:
    """Smallest over largest singular value of each trailing k x k block."""
    k = M.shape[-1]
    if k == 1:
        return np.where(M[..., 0, 0] != 0, 1.0, 0.0)
    if k == 2:
        a, b, c, d = M[..., 0, 0], M[..., 0, 1], M[..., 1, 0], M[..., 1, 1]
        fro = a * a + b * b + c * c + d * d
        det = np.abs(a * d - b * c)
        disc = np.sqrt(np.maximum(fro * fro - 4 * det * det, 0.0))
        smax2 = 0.5 * (fro + disc)
        smin2 = det * det / np.where(smax2 > 0, smax2, 1.0)
        return np.sqrt(smin2 / np.where(smax2 > 0, smax2, 1.0))
    s = np.linalg.svd(M, compute_uv=False)
    return s[..., -1] / np.where(s[..., 0] > 0, s[..., 0], 1.0)


def small_inv(M: np.ndarray) -> np.ndarray:
    """Batched inverse of k x k blocks; explicit adjugate formulas for k <= 2."""
    k = M.shape[-1]
    if k == 1:
        return 1.0 / M
    if k == 2:
        a, b, c, d = M[..., 0, 0], M[..., 0, 1], M[..., 1, 0], M[..., 1, 1]
        r = 1.0 / (a * d - b * c)
        out = np.empty_like(M)
        np.multiply(d, r, out=out[..., 0, 0])
        np.multiply(b, -r, out=out[..., 0, 1])
        np.multiply(c, -r, out=out[..., 1, 0])
        np.multiply(a, r, out=out[..., 1, 1])
        return out
    return np.linalg.inv(M)


def _safe_inv(M: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Batched inverse; inactive blocks are replaced by the identity first."""
    k = M.shape[-1]
    Ms = np.where(active[..., None, None], M, np.eye(k))
    return small_inv(Ms)


def matvec(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``M x`` for ``M`` of shape (*grid, k, k) and ``x`` of shape (..., *grid, k)."""
    k = M.shape[-1]
    out = np.empty(np.broadcast_shapes(M.shape[:-1], x.shape), dtype=np.result_type(M, x))
    for a in range(k):
        acc = M[..., a, 0] * x[..., 0]
        for b in range(1, k):
            acc += M[..., a, b] * x[..., b]
        out[..., a] = acc
    return out


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``<a, b>`` over the trailing axis, one component at a time."""
    out = a[..., 0] * b[..., 0]
    for q in range(1, a.shape[-1]):
        out += a[..., q] * b[..., q]
    return out


def _op(L) -> Operator:
    return L if isinstance(L, Operator) else analyze_operator(L)


# ---------------------------------------------------------------------------
# linear systems


def normal_connection(data: PrincipalData) -> np.ndarray:
    """Coefficients ``h_ir`` of ``nabla^perp_{d_i} xi_r = h_ir xi_i``, shape (n, p, *grid)."""
    n = data.n
    if data.kind is Kind.FlatPair:
        return data.h[:, : data.p]
    if data.kind in (Kind.LagrangianPair, Kind.HorizontalPair):
        return data.h[:, :n]
    if data.kind is Kind.HorizontalTriple:
        return np.concatenate([data.h[:, :n], data.rho[:, None]], axis=1)
    raise SchemaError(f"{data.kind.value} has no principal normal connection of this form")


def _check_L(L: Operator) -> np.ndarray:
    lm = L.entries
    if np.linalg.matrix_rank(lm) < lm.shape[0]:
        raise SingularOperator("the operator L must be invertible")
    return lm


def _system_R(data: PrincipalData, lm: np.ndarray):
    n = data.n
    H = normal_connection(data)
    p = H.shape[1]
    if p < n:
        raise SchemaError("system R needs at least n normal directions")
    k = lm.shape[0]
    m = np.linalg.inv(lm.T) - np.eye(k)  # (L^t)^{-1} - I
    c = data.c

    def rhs(i, y, cf):
        v, h, hn = cf["v"], cf["h"], cf["H"]
        phi, gam, bet = y[0], y[1 : 1 + n], y[1 + n : 1 + n + p]
        dy = np.empty_like(y)
        dy[0] = v[i] * gam[i]
        acc = -(m @ bet[i])
        if c:
            acc -= (c * v[i]) * phi
        for j in range(n):
            if j != i:
                dy[1 + j] = h[j, i] * gam[i]
                acc -= h[j, i] * gam[j]
        dy[1 + i] = acc
        acc = -gam[i]
        for r in range(p):
            if r != i:
                dy[1 + n + r] = hn[i, r] * bet[i]
                acc = acc - hn[i, r] * bet[r]
        dy[1 + n + i] = acc
        return dy

    def source(i, y, cf):
        return y[1 + n + i]

    fields = {"v": Field(data.v, 1), "h": Field(data.h, 2), "H": Field(H, 2)}
    return rhs, source, fields, p


def _system_Rstar(data: PrincipalData, lm: np.ndarray, c: float, ct: float):
    if data.kind is not Kind.CurvedTriple:
        raise SchemaError("the curved system needs CurvedTriple data")
    n = data.n
    p = data.V.shape[1]
    k = lm.shape[0]
    lti = np.linalg.inv(lm.T)
    m = lti - np.eye(k)
    q = lti * (c - ct) + ct * np.eye(k)

    def combo(i, y, cf):
        # sum_r V_ir beta^r
        V = cf["V"]
        sb = V[i, 0] * y[1 + n]
        for r in range(1, p):
            sb = sb + V[i, r] * y[1 + n + r]
        return sb

    def rhs(i, y, cf):
        v, h, V = cf["v"], cf["h"], cf["V"]
        phi, gam = y[0], y[1 : 1 + n]
        dy = np.empty_like(y)
        dy[0] = v[i] * gam[i]
        for r in range(p):
            dy[1 + n + r] = -V[i, r] * gam[i]
        acc = -(m @ combo(i, y, cf)) - v[i] * (q @ phi)
        for j in range(n):
            if j != i:
                dy[1 + j] = h[j, i] * gam[i]
                acc -= h[j, i] * gam[j]
        dy[1 + i] = acc
        return dy

    def source(i, y, cf):
        b = combo(i, y, cf)
        if c != ct:
            b = b + (c - ct) * cf["v"][i] * y[0]
        return b

    fields = {"v": Field(data.v, 1), "h": Field(data.h, 2), "V": Field(data.V, 2)}
    return rhs, source, fields, p


def _initial_state(init, n, p, k):
    phi0, g0, b0 = (np.asarray(a, dtype=float) for a in init)
    return np.concatenate([phi0.reshape(1, k), g0.reshape(n, k), b0.reshape(p, k)])


def _unpack(y, n, L, c, ct, active):
    y = np.moveaxis(y, -2, 0)
    return CombescureData(y[0], y[1 : 1 + n], y[1 + n :], L, c, ct, active)


def integrate_system_R(data: PrincipalData, L, init, order=None) -> CombescureData:
    """Integrate the linear system for an L-transform when ``c = ct``.

    For each axis ``i`` (``j, r != i``)::

        d_i phi     = v_i gamma_i
        d_i gamma_j = h_ji gamma_i
        d_i gamma_i = -sum_j h_ji gamma_j - ((L^t)^{-1} - I) beta^i - c v_i phi
        d_i beta^r  = h_ir beta^i
        d_i beta^i  = -gamma_i - sum_r h_ir beta^r

    Parameters
    ----------
    data : PrincipalData
        Flat pair, Lagrangian pair or horizontal data (``p >= n`` normals).
    L : array_like or Operator
    init : tuple
        ``(phi0 (k,), gamma0 (n, k), beta0 (p, k))`` at the base node.
    """
    L = _op(L)
    lm = _check_L(L)
    rhs, _, fields, p = _system_R(data, lm)
    y0 = _initial_state(init, data.n, p, lm.shape[0])
    y = rk4_sweep(data.grid, y0, rhs, fields, order=order)
    return _unpack(y, data.n, L, data.c, data.c_tilde, data.active)


def integrate_system_Rstar(data: PrincipalData, L, c: float | None = None, c_tilde: float | None = None, init=None, order=None) -> CombescureData:
    """Integrate the linear system for an L-transform when ``c != ct``.

    For each axis ``i`` (``j != i``)::

        d_i phi     = v_i gamma_i
        d_i gamma_j = h_ji gamma_i
        d_i gamma_i = -sum_j h_ji gamma_j - ((L^t)^{-1} - I) sum_r V_ir beta^r
                      - ((L^t)^{-1} (c - ct) + ct) v_i phi
        d_i beta^r  = -V_ir gamma_i
    """
    L = _op(L)
    lm = _check_L(L)
    c = data.c if c is None else c
    ct = data.c_tilde if c_tilde is None else c_tilde
    rhs, _, fields, p = _system_Rstar(data, lm, c, ct)
    y0 = _initial_state(init, data.n, p, lm.shape[0])
    y = rk4_sweep(data.grid, y0, rhs, fields, order=order)
    return _unpack(y, data.n, L, c, ct, data.active)


def integrate_L_transform(data: PrincipalData, L, init, Omega0, order=None, substeps: int = 1) -> tuple[CombescureData, OmegaField]:
    """Integrate the linear system together with ``Omega``.

    ``Omega`` rides along as ``k`` extra state rows with
    ``d_l Omega = -gamma_l b_l^t L^{-1}``, so every RK4 stage sees consistent
    values; this keeps ``Omega + Omega^t = G^t G`` at the level of the
    integration error of the linear system itself.  The curved system is
    chosen for ``CurvedTriple`` data.
    """
    L = _op(L)
    lm = _check_L(L)
    k = lm.shape[0]
    n = data.n
    if data.kind is Kind.CurvedTriple:
        rhs0, source, fields, p = _system_Rstar(data, lm, data.c, data.c_tilde)
    else:
        rhs0, source, fields, p = _system_R(data, lm)
    rows = 1 + n + p
    linv = np.linalg.inv(lm)

    def rhs(i, y, cf):
        dy = np.empty_like(y)
        dy[:rows] = rhs0(i, y[:rows], cf)
        b = linv.T @ source(i, y[:rows], cf)  # (b_l^t L^{-1})^t
        dy[rows:] = -y[1 + i][:, None] * b[None]
        return dy

    Omega0 = np.asarray(Omega0, dtype=float).reshape(k, k)
    y0 = np.concatenate([_initial_state(init, n, p, k), Omega0])
    y = rk4_sweep(data.grid, y0, rhs, fields, order=order, substeps=substeps)
    comb = _unpack(y[..., :rows, :], n, L, data.c, data.c_tilde, data.active)
    om = np.ascontiguousarray(y[..., rows:, :])
    return comb, OmegaField(om, Omega0, singular_ratio(om))


def omega_source_vectors(data: PrincipalData, comb: CombescureData) -> np.ndarray:
    """Vectors ``b_l`` with ``d_l Omega = -gamma_l b_l^t L^{-1}``; shape (n, *grid, k).

    ``b_l = beta^l`` when ``c = ct``; otherwise
    ``b_l = sum_r V_lr beta^r + (c - ct) v_l phi``.
    """
    n = data.n
    if comb.c == comb.c_tilde and data.kind is not Kind.CurvedTriple:
        return comb.beta[:n]
    V = data.V
    b = np.einsum("lr...,r...a->l...a", V, comb.beta)
    if comb.c != comb.c_tilde:
        b = b + (comb.c - comb.c_tilde) * data.v[..., None] * comb.phi[None]
    return b


def integrate_omega(comb: CombescureData, data: PrincipalData, Omega0, order=None) -> OmegaField:
    """Integrate ``dOmega = G^t dG`` from its base value.

    For L-transforms ``d_l Omega = -gamma_l b_l^t L^{-1}`` (see
    ``omega_source_vectors``); the right-hand side does not depend on
    ``Omega``, so RK4 reduces to Simpson's rule with interpolated midpoints.
    ``integrate_L_transform`` is more accurate and is what pipelines use;
    this quadrature serves as an independent cross-check.
    """
    if comb.L is None:
        raise SchemaError("integrate_omega needs the operator L")
    k = comb.k
    linv = np.linalg.inv(comb.L.entries)
    b = omega_source_vectors(data, comb)
    bl = np.einsum("l...a,ab->l...b", b, linv)  # rows of b_l^t L^{-1}

    def rhs(i, y, cf):
        return -cf["g"][i][:, None] * cf["b"][i][None]

    fields = {"g": Field(comb.gamma, 1), "b": Field(bl, 1)}
    Omega0 = np.asarray(Omega0, dtype=float).reshape(k, k)
    om = rk4_sweep(data.grid, Omega0, rhs, fields, order=order)
    return OmegaField(om, Omega0, singular_ratio(om))


# ---------------------------------------------------------------------------
# transform


def _frame_vectors(frame: ImmersionField) -> list:
    """Accessors for the frame basis ``X_1..X_n, xi_1..xi_p[, sqrt(ct) f]``."""
    vecs = [("X", i) for i in range(frame.n)] + [("xi", r) for r in range(frame.p)]
    if frame.ambient_curvature > 0:
        vecs.append(("f", 0))
    return vecs


def combine(frame: ImmersionField, coeffs: np.ndarray) -> np.ndarray:
    """``sum_E coeffs[E] * E`` over the frame basis; ``coeffs`` has shape (N_E, *grid)."""
    basis = _frame_vectors(frame)
    if coeffs.shape[0] != len(basis):
        raise SchemaError("coefficient count does not match the frame basis")
    cx = [coeffs[i] for i in range(frame.n)]
    cf = 0.0
    terms = []
    for e, (kind, idx) in enumerate(basis):
        cc = coeffs[e]
        if kind == "xi":
            if frame.xi is None:
                if idx < frame.n:
                    cx[idx] = cx[idx] + 1j * cc
                else:
                    cf = cf + np.sqrt(frame.ambient_curvature) * 1j * cc
                continue
            terms.append((cc, frame.xi[idx]))
        elif kind == "f":
            cf = cf + np.sqrt(frame.ambient_curvature) * cc
    terms += [(cx[i], frame.X[i]) for i in range(frame.n)]
    if not np.isscalar(cf):
        terms.append((cf, frame.f))
    # accumulate in place through one scratch buffer
    shape = np.broadcast_shapes(*(c.shape + (1,) for c, _ in terms), *(v.shape for _, v in terms))
    dtype = np.result_type(*(c for c, _ in terms), *(v for _, v in terms))
    out = np.zeros(shape, dtype)
    tmp = np.empty(shape, dtype)
    for c, vec in terms:
        np.multiply(c[..., None], vec, out=tmp)
        out += tmp
    return out


def _left_mul(A: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``A M`` for a constant ``A`` and a field ``M`` of shape (*grid, k, k)."""
    k = A.shape[0]
    out = np.zeros(M.shape)
    for a in range(k):
        for c in range(k):
            if A[a, c] != 0:
                for b in range(k):
                    out[..., a, b] += A[a, c] * M[..., c, b]
    return out


def _normal_mixing(comb: CombescureData, oinv: np.ndarray) -> np.ndarray:
    """``M_rl = <beta^r, L^{-1} Omega^{-1} beta^l>``, shape (*grid, p, p)."""
    lo = _left_mul(np.linalg.inv(comb.L.entries), oinv)
    return np.einsum("r...a,...ab,l...b->...rl", comb.beta, lo, comb.beta)


def _principal_normals(comb: CombescureData) -> bool:
    return comb.L is not None and comb.c == comb.c_tilde


def apply_vectorial_ribaucour(
    frame: ImmersionField,
    comb: CombescureData,
    omega: OmegaField,
    with_frame: bool = True,
) -> ImmersionField:
    """Transformed immersion ``f~ = f - G Omega^{-1} phi`` and its frame.

    The tangent frame is ``X~_l = P X_l`` with ``P = I - G Omega^{-1} G^t``;
    the normal frame is ``P xi_r`` for ``c != ct`` and, for ``c = ct`` with a
    known L, the principal frame ``P(xi_r - sum_l M_rl xi_l)`` where
    ``M_rl = <beta^r, L^{-1} Omega^{-1} beta^l>``.  Nodes where ``Omega`` is
    singular are marked inactive.
    """
    active = omega.active
    if comb.active is not None:
        active = active & comb.active
    if frame.active is not None:
        active = active & frame.active
    oinv = omega.inverse()
    w = matvec(oinv, comb.phi)
    coeff = [-_dot(comb.gamma, w), -_dot(comb.beta, w)]
    if comb.c_tilde > 0:
        coeff.append(-np.sqrt(comb.c_tilde) * _dot(comb.phi, w)[None])
    f_new = frame.f + combine(frame, np.concatenate(coeff))
    if not with_frame:
        return ImmersionField(f_new, np.zeros((0,) + f_new.shape, f_new.dtype), np.zeros((0,) + f_new.shape, f_new.dtype), frame.complex_structure, frame.ambient_curvature, active)

    Q = frame_change(comb, omega)
    n, p = frame.n, frame.p
    X_new = np.stack([combine(frame, np.moveaxis(Q[..., :, l], -1, 0)) for l in range(n)])
    xi_new = np.stack([combine(frame, np.moveaxis(Q[..., :, n + r], -1, 0)) for r in range(p)])
    return ImmersionField(f_new, X_new, xi_new, frame.complex_structure, frame.ambient_curvature, active)


def frame_change(comb: CombescureData, omega: OmegaField) -> np.ndarray:
    """Transformed frame basis expressed in the original one.

    Column ``e`` of the (*grid, N_E, N_E) result holds the coordinates of the
    e-th vector of ``X~_1..X~_n, xi~_1..xi~_p[, sqrt(ct) f~]`` in the basis
    ``X_1..X_n, xi_1..xi_p[, sqrt(ct) f]``.  The matrix is orthogonal.
    """
    oinv = omega.inverse()
    G = comb.components()  # (*grid, N_E, k)
    ne = G.shape[-2]
    Q = np.eye(ne) - np.einsum("...ea,...ab,...fb->...ef", G, oinv, G)  # P in frame coordinates
    if _principal_normals(comb):
        n, p = comb.n, comb.p
        M = _normal_mixing(comb, oinv)
        mix = np.zeros(M.shape[:-2] + (ne, ne))
        mix[...] = np.eye(ne)
        mix[..., n : n + p, n : n + p] = np.eye(p) - np.swapaxes(M, -1, -2)
        Q = np.einsum("...ef,...fg->...eg", Q, mix)
    return Q


def transformed_principal_data(data: PrincipalData, comb: CombescureData, omega: OmegaField) -> PrincipalData:
    """Principal data of the transform in the source coordinates.

    ``c = ct``::

        v~_j  = v_j + <beta^j, L^{-1} Omega^{-1} phi>
        h~_ir = h_ir + <beta^r, L^{-1} Omega^{-1} gamma_i>

    ``c != ct`` with ``B_i = -(L^t)^{-1}(sum_r V_ir beta^r + (c - ct) v_i phi)``::

        v~_j  = v_j - <B_j, Omega^{-1} phi>
        h~_ij = h_ij - <B_j, Omega^{-1} gamma_i>
        V~_ir = V_ir + <B_i, Omega^{-1} beta^r>

    Nodes where ``Omega`` is singular or some ``v~_i`` vanishes are marked
    inactive (with a warning when that happens).
    """
    if comb.L is None:
        raise SchemaError("transformed data need the operator L")
    n = data.n
    active = omega.active
    if comb.active is not None:
        active = active & comb.active
    oinv = omega.inverse()
    lm = comb.L.entries
    if comb.c == comb.c_tilde and data.kind is not Kind.CurvedTriple:
        lo = _left_mul(np.linalg.inv(lm), oinv)  # L^{-1} Omega^{-1}
        lw = matvec(lo, comb.phi)
        lg = matvec(lo, comb.gamma)
        v_new = data.v + _dot(comb.beta[:n], lw)
        corr = np.stack([_dot(comb.beta, lg[i]) for i in range(n)])  # <beta^r, L^-1 Om^-1 gamma_i>
        H = normal_connection(data) + corr
        if data.kind is Kind.FlatPair:
            h_new = np.array(data.h, dtype=float)
            h_new[:, : data.p] = H
            new = replace(data, v=v_new, h=h_new, degenerate=False, active=None)
        elif data.kind is Kind.HorizontalTriple:
            new = replace(data, v=v_new, h=H[:, :n], rho=H[:, n], degenerate=False, active=None)
        else:
            new = replace(data, v=v_new, h=H[:, :n], degenerate=False, active=None)
    else:
        w = matvec(oinv, comb.phi)
        og = matvec(oinv, comb.gamma)  # Omega^{-1} gamma_i
        lti = np.linalg.inv(lm.T)
        vb = np.einsum("ir...,r...a->i...a", data.V, comb.beta)
        vb = vb + (comb.c - comb.c_tilde) * data.v[..., None] * comb.phi[None]
        B = -np.einsum("ab,i...b->i...a", lti, vb)
        v_new = data.v - np.einsum("j...a,...a->j...", B, w)
        h_new = data.h - np.einsum("j...a,i...a->ij...", B, og)
        ob = matvec(oinv, comb.beta)
        V_new = data.V + np.einsum("i...a,r...a->ir...", B, ob)
        new = replace(data, v=v_new, h=h_new, V=V_new, degenerate=False, active=None)
    nonzero = np.all(np.abs(new.v) > V_MIN, axis=0)
    if not np.all(nonzero[active]):
        warnings.warn("some transformed v_i vanish; those nodes are excluded", RuntimeWarning, stacklevel=2)
    return replace(new, active=active & nonzero)


def inverse_transform_data(
    comb: CombescureData, omega: OmegaField, transformed_frame: ImmersionField | None = None
) -> tuple[CombescureData, OmegaField]:
    """Data of the inverse transform, an ``L^t``-transform of ``f~``.

    ``phi~ = Omega^{-1} phi``, ``gamma~_l = Omega^{-1} gamma_l``,
    ``beta~ = P beta (Omega^{-1})^t`` expressed in the normal frame produced by
    ``apply_vectorial_ribaucour`` and ``Omega~ = Omega^{-1}``.
    """
    active = omega.active
    if comb.active is not None:
        active = active & comb.active
    if transformed_frame is not None and transformed_frame.active is not None:
        active = active & transformed_frame.active
    oinv = omega.inverse()
    phi_t = matvec(oinv, comb.phi)
    gam_t = matvec(oinv, comb.gamma)
    bet = comb.beta
    if _principal_normals(comb):
        M = _normal_mixing(comb, oinv)
        bet = comb.beta - np.einsum("...rs,s...a->r...a", M, comb.beta)
    bet_t = matvec(oinv, bet)
    Lt = analyze_operator(comb.L.entries.T) if comb.L is not None else None
    new = CombescureData(phi_t, gam_t, bet_t, Lt, comb.c, comb.c_tilde, active)
    om = OmegaField(oinv, np.linalg.inv(omega.base_value), singular_ratio(oinv) * active)
    return new, om


# ---------------------------------------------------------------------------
# slab-wise evaluation
#
# Everything after the integration is pointwise in the grid, so large grids
# are processed in slabs along axis 0.  Thin slabs keep the temporaries
# cache resident, which is markedly faster than whole-grid evaluation.


def slab_bounds(length: int, slab: int) -> list[tuple[int, int]]:
    """Near-equal consecutive ranges of at least 3 nodes covering ``range(length)``."""
    parts = max(1, min(length // 3, -(-length // max(slab, 3))))
    edges = np.linspace(0, length, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def _opt(arr, sl, lead):
    if arr is None:
        return None
    return arr[(slice(None),) * lead + (sl,)]


def slab_data(data: PrincipalData, a: int, b: int) -> PrincipalData:
    sl = slice(a, b)
    return replace(
        data,
        grid=data.grid.slab(a, b),
        v=data.v[:, sl],
        h=data.h[:, :, sl],
        V=_opt(data.V, sl, 2),
        rho=_opt(data.rho, sl, 1),
        active=_opt(data.active, sl, 0),
    )


def slab_comb(comb: CombescureData, a: int, b: int) -> CombescureData:
    sl = slice(a, b)
    return replace(comb, phi=comb.phi[sl], gamma=comb.gamma[:, sl], beta=comb.beta[:, sl], active=_opt(comb.active, sl, 0))


def slab_frame(frame: ImmersionField, a: int, b: int) -> ImmersionField:
    sl = slice(a, b)
    X = tuple(x[sl] for x in frame.X) if isinstance(frame.X, tuple) else frame.X[:, sl]
    return replace(frame, f=frame.f[sl], X=X, xi=_opt(frame.xi, sl, 1), active=_opt(frame.active, sl, 0))


def slab_omega(omega: OmegaField, a: int, b: int) -> OmegaField:
    sr = None if omega.sigma_ratio is None else omega.sigma_ratio[a:b]
    return OmegaField(omega.Omega[a:b], omega.base_value, sr)


def transform_in_slabs(
    frame: ImmersionField,
    data: PrincipalData,
    comb: CombescureData,
    omega: OmegaField,
    slab: int = 3,
    with_frame: bool = False,
    kernel=None,
) -> tuple[ImmersionField, PrincipalData]:
    """``apply_vectorial_ribaucour`` and ``transformed_principal_data`` slab by slab.

    ``kernel(frame, data, comb, omega)`` replaces both calls when given; it
    must return the transformed ``(ImmersionField, PrincipalData)`` of a slab.
    """
    grid = data.grid
    m = grid.shape[0]
    fr_out = dd_out = None
    vanished = False
    # (attribute, axis of the first grid dimension)
    f_attrs = (("f", 0), ("X", 1), ("xi", 1), ("active", 0))
    d_attrs = (("v", 1), ("h", 2), ("V", 2), ("rho", 1), ("active", 0))

    def alloc(piece, attrs):
        # full-size arrays filled slab by slab, so no concatenation copy is needed
        out = {}
        for name, ax in attrs:
            arr = getattr(piece, name)
            if arr is not None:
                out[name] = np.empty(arr.shape[:ax] + (m,) + arr.shape[ax + 1 :], dtype=arr.dtype)
        return out

    def fill(out, piece, attrs, a, b):
        for name, ax in attrs:
            if name in out:
                out[name][(slice(None),) * ax + (slice(a, b),)] = getattr(piece, name)

    for a, b in slab_bounds(m, slab):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cb, om = slab_comb(comb, a, b), slab_omega(omega, a, b)
            if kernel is None:
                fr = apply_vectorial_ribaucour(slab_frame(frame, a, b), cb, om, with_frame)
                dd = transformed_principal_data(slab_data(data, a, b), cb, om)
            else:
                fr, dd = kernel(slab_frame(frame, a, b), slab_data(data, a, b), cb, om)
        vanished |= bool(caught)
        if fr_out is None:
            fr0, d0 = fr, dd
            fr_out, dd_out = alloc(fr, f_attrs), alloc(dd, d_attrs)
        fill(fr_out, fr, f_attrs, a, b)
        fill(dd_out, dd, d_attrs, a, b)
        del fr, dd
    if vanished:
        warnings.warn("some transformed v_i vanish; those nodes are excluded", RuntimeWarning, stacklevel=2)
    new_frame = replace(fr0, **{name: fr_out.get(name) for name, _ in f_attrs})
    new_data = replace(d0, grid=grid, **{name: dd_out.get(name) for name, _ in d_attrs})
    return new_frame, new_data


# ---------------------------------------------------------------------------
# invariants


def omega_gram_residual(comb: CombescureData, omega: OmegaField, mask=None) -> float:
    """``max |Omega + Omega^t - G^t G|``."""
    r = omega.Omega + np.swapaxes(omega.Omega, -1, -2) - comb.gram()
    return _masked(r, mask)


def omega_L_residual(comb: CombescureData, omega: OmegaField, L=None, mask=None) -> float:
    """``max |Omega L + L^t Omega^t - rho|``."""
    lm = (comb.L if L is None else _op(L)).entries
    om = omega.Omega
    r = om @ lm + lm.T @ np.swapaxes(om, -1, -2) - comb.rho()
    return _masked(r, mask)


def _masked(r, mask) -> float:
    a = np.abs(r)
    if mask is not None:
        a = a[mask]
    return float(a.max()) if a.size else 0.0


def frame_gram_residual(frame: ImmersionField, comb: CombescureData, omega: OmegaField, mask=None) -> float:
    """Like ``omega_gram_residual`` but with ``G`` built from actual frame vectors."""
    k = comb.k
    cols = []
    for a in range(k):
        coef = np.moveaxis(comb.components()[..., a], -1, 0)
        cols.append(combine(frame, coef))
    g = np.empty(omega.Omega.shape)
    for a in range(k):
        for b in range(k):
            g[..., a, b] = inner(cols[a], cols[b])
    return _masked(omega.Omega + np.swapaxes(omega.Omega, -1, -2) - g, mask)
