"""P-transforms of flat Lagrangian and horizontal submanifolds.

A P-transform is the vectorial Ribaucour transform whose normal data are
tied to the tangent data by the complex structure, ``beta^i = P^t gamma_i``
(and ``beta^{n+1} = sqrt(c) P^t phi`` along the Hopf direction in the
horizontal case).  ``Omega`` is then algebraic: ``Omega^t`` solves the
Lyapunov equation ``P^t Y + Y P = ((P^t)^2 + I) Q P`` with
``Q = sum_i gamma_i gamma_i^t + c phi phi^t``.  Every P-transform is also an
L-transform with ``L = (P^2 + I)^{-1} P^2``, which is how the transformed
immersion and its principal data are produced in general.  Flat variants
without a transformed frame use the direct P formulas instead, and the
test suite cross-checks the two routes.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConstraintError, SchemaError
from .geomgrid import ImmersionField, Kind, PrincipalData, _masked_max, vanishes
from .matrixeq import Operator, analyze_operator, check_spectrum_clash, lyapunov_apply, lyapunov_plan
from .ribaucour import (
    V_MIN,
    CombescureData,
    OmegaField,
    gram_entry,
    integrate_omega,
    omega_gram_residual,
    omega_L_residual,
    matvec,
    singular_ratio,
    slab_bounds,
    slab_comb,
    transform_in_slabs,
)
from .sweep import Field, rk4_sweep

CONSERVATION_TOL = 1e-8


class Variant(enum.Enum):
    FlatLagrangian = "FlatLagrangian"
    PStar = "PStar"
    Horizontal = "Horizontal"


@dataclass(frozen=True)
class PTransformSpec:
    """Operator and base-node data of a P-transform.

    Attributes
    ----------
    P : Operator
        Invertible, with no two eigenvalues summing to zero.
    variant : Variant
    c : float
        Curvature of the horizontal class (0 for the flat variants).
    init_phi : ndarray (k,) or None
        ``phi`` at the base node.  For ``PStar`` it may be omitted and is then
        fixed by the constraint ``phi + sum_i v_i P^t gamma_i = 0``.
    init_gamma : ndarray (n, k)
    """

    P: Operator
    init_gamma: np.ndarray
    init_phi: np.ndarray | None = None
    variant: Variant = Variant.FlatLagrangian
    c: float = 0.0

    def __post_init__(self):
        P = self.P if isinstance(self.P, Operator) else analyze_operator(self.P)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "variant", Variant(self.variant))
        check_spectrum_clash(P)
        if np.linalg.matrix_rank(P.entries) < P.dim:
            raise SchemaError("P must be invertible")
        g = np.atleast_2d(np.asarray(self.init_gamma, dtype=float))
        if g.shape[-1] != P.dim:
            raise SchemaError(f"init_gamma rows must have length {P.dim}")
        object.__setattr__(self, "init_gamma", g)
        if self.init_phi is not None:
            phi = np.asarray(self.init_phi, dtype=float).reshape(P.dim)
            object.__setattr__(self, "init_phi", phi)
        elif self.variant is not Variant.PStar:
            raise SchemaError("init_phi is required unless the variant is PStar")
        if self.variant is Variant.Horizontal and self.c <= 0:
            raise SchemaError("the horizontal variant is exercised for c > 0 only")
        if self.variant is not Variant.Horizontal and self.c != 0:
            raise SchemaError("flat variants need c = 0")

    @property
    def k(self) -> int:
        return self.P.dim

    @property
    def T(self) -> np.ndarray:
        """``-P^t - (P^t)^{-1}``."""
        pt = self.P.entries.T
        return -pt - np.linalg.inv(pt)

    @property
    def L(self) -> np.ndarray:
        """``(P^2 + I)^{-1} P^2``, the operator of the associated L-transform."""
        p2 = self.P.entries @ self.P.entries
        return np.linalg.solve(p2 + np.eye(self.k), p2)


def pstar_phi(spec: PTransformSpec, v0: np.ndarray) -> np.ndarray:
    """``-sum_i v_i P^t gamma_i`` at the base node."""
    return -np.einsum("i,ia->a", v0, spec.init_gamma @ spec.P.entries)


def _check_data(data: PrincipalData, spec: PTransformSpec):
    if spec.variant is Variant.Horizontal:
        if data.kind is not Kind.HorizontalTriple:
            raise SchemaError("the horizontal P-transform needs HorizontalTriple data")
        if abs(data.c - spec.c) > 1e-14:
            raise SchemaError("spec.c must equal the curvature of the data")
    elif data.kind is not Kind.LagrangianPair:
        raise SchemaError("flat P-transforms need LagrangianPair data")
    if spec.init_gamma.shape[0] != data.n:
        raise SchemaError(f"init_gamma needs {data.n} rows")


def integrate_system_P(data: PrincipalData, spec: PTransformSpec, order=None, substeps: int = 1) -> CombescureData:
    """Integrate the P-system and attach the algebraic normal components.

    For each axis ``i`` (``j != i``)::

        d_i phi     = v_i gamma_i
        d_i gamma_j = h_ji gamma_i
        d_i gamma_i = -(P^t)^{-1} gamma_i - sum_j h_ji gamma_j - c v_i phi

    then ``beta^i = P^t gamma_i`` and, in the horizontal case,
    ``beta^{n+1} = sqrt(c) P^t phi``.
    """
    _check_data(data, spec)
    n, k = data.n, spec.k
    c = spec.c
    base = data.grid.center_index
    phi0 = spec.init_phi
    if phi0 is None:
        phi0 = pstar_phi(spec, np.asarray(data.v)[(slice(None),) + base])
    pti = np.linalg.inv(spec.P.entries.T)  # (P^t)^{-1}
    y0 = np.concatenate([phi0.reshape(1, k), spec.init_gamma])
    live = [[j != i and not vanishes(data.h[j, i]) for i in range(n)] for j in range(n)]

    def rhs(i, y, cf):
        v, h = cf["v"], cf["h"]
        dy = np.zeros_like(y)
        gi = y[1 + i]
        dy[0] = v[i] * gi
        acc = -(pti @ gi)
        if c:
            acc -= (c * v[i]) * y[0]
        for j in range(n):
            if live[j][i]:
                dy[1 + j] = h[j, i] * gi
                acc -= h[j, i] * y[1 + j]
        dy[1 + i] = acc
        return dy

    fields = {"v": Field(data.v, 1), "h": Field(data.h, 2)}
    y = rk4_sweep(data.grid, y0, rhs, fields, order=order, substeps=substeps)
    y = np.moveaxis(y, -2, 0)
    phi, gamma = y[0], y[1:]
    pm = spec.P.entries
    beta = gamma @ pm  # rows: (P^t gamma_i)^t = gamma_i^t P
    if spec.variant is Variant.Horizontal:
        beta = np.concatenate([beta, (np.sqrt(c) * (phi @ pm))[None]])
    return CombescureData(phi, gamma, beta, analyze_operator(spec.L), c, c, data.active)


def lyapunov_omega(comb: CombescureData, spec: PTransformSpec, slab: int = 3) -> OmegaField:
    """Nodewise ``Omega`` from the Lyapunov equation.

    ``Omega^t`` solves ``P^t Y + Y P = ((P^t)^2 + I) Q P`` with
    ``Q = sum_i gamma_i gamma_i^t + c phi phi^t``.
    """
    pm = spec.P.entries
    k = spec.k
    plan = lyapunov_plan(spec.P)
    left = pm.T @ pm.T + np.eye(k)
    # Omega is linear in the symmetric Q: precompute its image on a basis
    pairs = [(x, y) for x in range(k) for y in range(x, k)]
    images = []
    for x, y in pairs:
        E = np.zeros((k, k))
        E[x, y] = E[y, x] = 1.0
        images.append(lyapunov_apply(plan, left @ E @ pm).T)
    grid_shape = comb.phi.shape[:-1]
    Omega = np.empty(grid_shape + (k, k))
    ratio = np.empty(grid_shape)
    for a, b in slab_bounds(grid_shape[0], slab):
        part = slab_comb(comb, a, b)
        q = [gram_entry(part.gamma, x, y) for x, y in pairs]
        if spec.c:
            q = [qq + spec.c * part.phi[..., x] * part.phi[..., y] for qq, (x, y) in zip(q, pairs)]
        for r in range(k):
            for s_ in range(k):
                acc = np.zeros(q[0].shape)
                for img, qq in zip(images, q):
                    if img[r, s_] != 0:
                        acc += img[r, s_] * qq
                Omega[a:b, ..., r, s_] = acc
        ratio[a:b] = singular_ratio(Omega[a:b])
    center = tuple(s // 2 for s in grid_shape)
    return OmegaField(Omega, Omega[center].copy(), ratio)


def t_commutation_residual(omega: OmegaField, spec: PTransformSpec, mask=None) -> float:
    """``max |T Omega - Omega^t T^t|``."""
    T = spec.T
    om = omega.Omega
    r = T @ om - np.swapaxes(om, -1, -2) @ T.T
    return _masked_max(np.moveaxis(r, (-2, -1), (0, 1)), mask)


def check_lagrangian(data: PrincipalData, mask=None) -> float:
    """``max |h_ij - h_ji|`` over the tangent block (zero for Lagrangian data)."""
    n = data.n
    h = np.asarray(data.h)[:, :n]
    m = data.active if mask is None else (mask if data.active is None else mask & data.active)
    return _masked_max(h - np.swapaxes(h, 0, 1), m)


def check_horizontal(data: PrincipalData, mask=None) -> float:
    """``max(|h_ij - h_ji|, |rho_i - sqrt(c) v_i|)`` for horizontal triples."""
    if data.kind is not Kind.HorizontalTriple:
        raise SchemaError("check_horizontal needs HorizontalTriple data")
    m = data.active if mask is None else (mask if data.active is None else mask & data.active)
    rho_dev = _masked_max(np.asarray(data.rho) - np.sqrt(abs(data.c)) * np.asarray(data.v), m)
    return max(check_lagrangian(data, mask), rho_dev)


def pstar_conservation(data: PrincipalData, comb: CombescureData, spec: PTransformSpec, mask=None, slab: int = 3) -> float:
    """``max |phi + sum_i v_i P^t gamma_i|`` over the grid (zero for P* data)."""
    pm = spec.P.entries
    v = np.asarray(data.v)
    worst = 0.0
    for a, b in slab_bounds(comb.phi.shape[0], slab):
        s = np.array(comb.phi[a:b])
        for i in range(data.n):
            if not vanishes(v[i, a:b]):
                s += v[i, a:b][..., None] * (comb.gamma[i, a:b] @ pm)
        worst = max(worst, _masked_max(np.moveaxis(s, -1, 0), None if mask is None else mask[a:b]))
    return worst


@dataclass(frozen=True)
class PTransformResult:
    """Transformed immersion and data together with the objects that built them."""

    frame: ImmersionField
    data: PrincipalData
    comb: CombescureData
    omega: OmegaField

    def invariants(self, spec: PTransformSpec) -> dict:
        m = self.data.active
        out = {
            "omega_gram": omega_gram_residual(self.comb, self.omega, m),
            "omega_L": omega_L_residual(self.comb, self.omega, mask=m),
            "t_commutation": t_commutation_residual(self.omega, spec, m),
        }
        if spec.variant is Variant.Horizontal:
            out["horizontal"] = check_horizontal(self.data)
        else:
            out["lagrangian"] = check_lagrangian(self.data)
        return out


def flat_P_kernel(spec: PTransformSpec):
    """Direct P formulas for flat variants (no transformed frame).

    ``f~ = f - sum_j (<Omega^{-1} phi, gamma_j> + i <P Omega^{-1} phi, gamma_j>) X_j``,
    ``v~_i = v_i + <gamma_i, (P + P^{-1}) Omega^{-1} phi>`` and
    ``h~_ij = h_ij + <gamma_j, (P + P^{-1}) Omega^{-1} gamma_i>``.
    """
    pm = spec.P.entries
    m = pm + np.linalg.inv(pm)
    k = spec.k

    def lincomb(coeffs, xs, out, buf):
        # out = sum_b coeffs[b] * xs[b]; coefficients are scalars or fields,
        # products go through buf so that no temporaries are allocated
        first = True
        for c, x in zip(coeffs, xs):
            if np.isscalar(c) and c == 0:
                continue
            if first:
                np.multiply(c, x, out=out)
                first = False
            elif np.isscalar(c) and c == 1:
                out += x
            else:
                np.multiply(c, x, out=buf)
                out += buf
        if first:
            out[...] = 0.0
        return out

    def kernel(frame: ImmersionField, data: PrincipalData, comb: CombescureData, omega: OmegaField):
        n = data.n
        active = omega.active
        if comb.active is not None:
            active = active & comb.active
        if frame.active is not None:
            active = active & frame.active
        oinv = omega.inverse()
        # contiguous component-first copies: strided trailing-k access is slow
        O = [[np.ascontiguousarray(oinv[..., a, b]) for b in range(k)] for a in range(k)]
        G = [np.ascontiguousarray(comb.gamma[..., a]) for a in range(k)]  # each (n, *slab)
        phi = [np.ascontiguousarray(comb.phi[..., a]) for a in range(k)]
        scal = np.empty(phi[0].shape)
        vec = np.empty(G[0].shape)
        w = [lincomb(O[a], phi, np.empty_like(scal), scal) for a in range(k)]  # Omega^{-1} phi
        pw = [lincomb(pm[a], w, np.empty_like(scal), scal) for a in range(k)]
        # Q = (P + P^{-1}) Omega^{-1}: v~ and h~ only need Q phi and Q gamma
        Q = [[lincomb(m[a], [O[b][c] for b in range(k)], np.empty_like(scal), scal) for c in range(k)] for a in range(k)]
        qphi = [lincomb(Q[a], phi, np.empty_like(scal), scal) for a in range(k)]
        coef = np.empty(G[0].shape, dtype=complex)
        lincomb(w, G, coef.real, vec)
        lincomb(pw, G, coef.imag, vec)
        f_new = np.array(frame.f, dtype=complex)
        tmp = np.empty(coef.shape[1:], dtype=complex)
        for j in range(n):
            # component by component: long inner loops, and zero components skipped
            for c in range(f_new.shape[-1]):
                xc = frame.X[j][..., c]
                if vanishes(xc):
                    continue
                np.multiply(coef[j], xc, out=tmp)
                f_new[..., c] -= tmp
        v_new = lincomb(qphi, G, np.empty_like(vec), vec)
        v_new += data.v
        h_new = np.empty(data.h.shape)
        h_new[:, n:] = data.h[:, n:]
        tangent = h_new[:, :n]
        block = np.empty(tangent.shape)
        for a in range(k):
            qg = lincomb(Q[a], G, vec, block[0])  # (Q gamma)_a
            np.multiply(qg[:, None], G[a][None, :], out=tangent if a == 0 else block)
            if a:
                tangent += block
        if not vanishes(data.h[:, :n]):
            tangent += data.h[:, :n]
        empty = np.zeros((0,) + f_new.shape, dtype=complex)
        new_frame = ImmersionField(f_new, empty, empty, True, frame.ambient_curvature, active)
        nonzero = np.all(np.abs(v_new) > V_MIN, axis=0)
        if not np.all(nonzero[active]):
            warnings.warn("some transformed v_i vanish; those nodes are excluded", RuntimeWarning, stacklevel=2)
        new_data = replace(data, v=v_new, h=h_new, degenerate=False, active=active & nonzero)
        return new_frame, new_data

    return kernel


def apply_P_transform(
    frame: ImmersionField,
    data: PrincipalData,
    spec: PTransformSpec,
    comb: CombescureData | None = None,
    with_frame: bool = True,
    substeps: int = 1,
    slab: int = 3,
) -> PTransformResult:
    """Run the P-transform pipeline on a seed.

    Post-integration algebra runs in slabs of ``slab`` nodes along axis 0.

    ``f~ = f - sum_j (<Omega^{-1} phi, gamma_j> + i <P Omega^{-1} phi, gamma_j>) X_j``
    (plus the Hopf and position terms in the horizontal case), with
    ``v~_i = v_i + <gamma_i, (P + P^{-1}) Omega^{-1} phi>`` and
    ``h~_ij = h_ij + <gamma_j, (P + P^{-1}) Omega^{-1} gamma_i>``.
    """
    if comb is None:
        comb = integrate_system_P(data, spec, substeps=substeps)
    omega = lyapunov_omega(comb, spec)
    kernel = None if with_frame or spec.variant is Variant.Horizontal else flat_P_kernel(spec)
    new_frame, new_data = transform_in_slabs(frame, data, comb, omega, slab=slab, with_frame=with_frame, kernel=kernel)
    return PTransformResult(new_frame, new_data, comb, omega)


def apply_Pstar_transform(
    frame: ImmersionField,
    data: PrincipalData,
    spec: PTransformSpec,
    comb: CombescureData | None = None,
    with_frame: bool = True,
    substeps: int = 1,
    slab: int = 3,
) -> PTransformResult:
    """P-transform whose data satisfy ``phi + sum_i v_i P^t gamma_i = 0``.

    The seed must lie in the unit sphere; the output then does too.

    Raises
    ------
    ConstraintError
        If the constraint fails at the base node or is not conserved.
    """
    if spec.variant is not Variant.PStar:
        raise SchemaError("apply_Pstar_transform needs a PStar spec")
    base = data.grid.center_index
    v0 = np.asarray(data.v)[(slice(None),) + base]
    if abs(np.sum(v0**2) - 1.0) > CONSERVATION_TOL:
        raise ConstraintError("the seed is not contained in the unit sphere (sum v_i^2 != 1)")
    if spec.init_phi is not None:
        dev = np.abs(spec.init_phi - pstar_phi(spec, v0)).max()
        if dev > CONSERVATION_TOL:
            raise ConstraintError(f"base data violate phi + sum v_i P^t gamma_i = 0 (deviation {dev:.3g})")
    if comb is None:
        comb = integrate_system_P(data, spec, substeps=substeps)
    drift = pstar_conservation(data, comb, spec)
    if drift > CONSERVATION_TOL:
        raise ConstraintError(f"phi + sum v_i P^t gamma_i is not conserved (drift {drift:.3g})")
    return apply_P_transform(frame, data, spec, comb=comb, with_frame=with_frame, slab=slab)


def pstar_v_formula(data: PrincipalData, comb: CombescureData, omega: OmegaField, spec: PTransformSpec) -> np.ndarray:
    """``v~_i = v_i - sum_j v_j <Omega^{-1} gamma_i, ((P^t)^2 + I) gamma_j>`` (P* form)."""
    pm = spec.P.entries
    oinv = omega.inverse()
    og = matvec(oinv, comb.gamma)
    w = comb.gamma @ (pm @ pm + np.eye(spec.k))  # rows ((P^t)^2 + I) gamma_j
    return np.asarray(data.v) - np.einsum("j...,i...a,j...a->i...", np.asarray(data.v), og, w)


def omega_cross_check(data: PrincipalData, comb: CombescureData, omega: OmegaField, order=None) -> float:
    """``max |Omega_lyapunov - Omega_integrated|`` with the same base value."""
    integrated = integrate_omega(comb, data, omega.base_value, order=order)
    return _masked_max(integrated.Omega - omega.Omega, data.active)
