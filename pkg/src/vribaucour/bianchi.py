"""Decomposition of vectorial transforms and Bianchi cubes.

A vectorial transform whose operator is block diagonal splits into two
consecutive transforms; iterating the split down to scalar blocks gives a
chain of scalar steps.  A Bianchi cube assembles ``k`` scalar transforms of
the same immersion into one ``k``-dimensional transform with an algebraic
``Omega``; every vertex ``f_a = f - F^a (Omega^a)^{-1} phi^a`` is then
available without further integration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DuplicateOperator, NotCompatible, SchemaError, SplitMismatch
from .geomgrid import Grid, ImmersionField, PrincipalData, diff, inner, interior_mask
from .matrixeq import analyze_operator
from .ribaucour import (
    CombescureData,
    OmegaField,
    apply_vectorial_ribaucour,
    combine,
    frame_change,
    singular_ratio,
    transformed_principal_data,
)

COMMUTE_TOL = 1e-8
DUPLICATE_TOL = 1e-10


# ---------------------------------------------------------------------------
# sub-blocks


def sub_comb(comb: CombescureData, idx) -> CombescureData:
    """Components ``idx`` of the Combescure data (the operator restricted to them)."""
    idx = list(idx)
    L = None if comb.L is None else analyze_operator(comb.L.entries[np.ix_(idx, idx)])
    return replace(comb, phi=comb.phi[..., idx], gamma=comb.gamma[..., idx], beta=comb.beta[..., idx], L=L)


def _block(M: np.ndarray, rows, cols) -> np.ndarray:
    return M[..., list(rows), :][..., list(cols)]


def sub_omega(omega: OmegaField, idx) -> OmegaField:
    """Principal sub-block ``Omega^a``."""
    om = _block(omega.Omega, idx, idx)
    return OmegaField(om, _block(omega.base_value, idx, idx), singular_ratio(om))


def stack_scalars(scalars, L_list=None) -> CombescureData:
    """Combine ``k`` scalar Combescure data into one with ``L = diag(L_i)``."""
    scalars = list(scalars)
    if not scalars:
        raise SchemaError("at least one scalar transform is needed")
    first = scalars[0]
    for s in scalars:
        if s.k != 1:
            raise SchemaError("cube inputs must be scalar (k = 1) transforms")
        if s.phi.shape != first.phi.shape or s.beta.shape != first.beta.shape:
            raise SchemaError("scalar transforms live on different grids or frames")
        if (s.c, s.c_tilde) != (first.c, first.c_tilde):
            raise SchemaError("scalar transforms disagree on (c, ct)")
    if L_list is None:
        L_list = [float(s.L.entries[0, 0]) for s in scalars]
    active = None
    for s in scalars:
        if s.active is not None:
            active = s.active if active is None else active & s.active
    return CombescureData(
        np.concatenate([s.phi for s in scalars], axis=-1),
        np.concatenate([s.gamma for s in scalars], axis=-1),
        np.concatenate([s.beta for s in scalars], axis=-1),
        analyze_operator(np.diag(np.asarray(L_list, dtype=float))),
        first.c,
        first.c_tilde,
        active,
    )


# ---------------------------------------------------------------------------
# decomposition


@dataclass(frozen=True)
class Decomposition:
    """First step ``f_j`` and the bar data of the second step, relative to ``f_j``.

    ``bar_comb`` is expressed in the frame of ``step_frame``; its sphere row
    is recomputed from the transformed vectors, and ``sphere_row_residual``
    reports how far it is from ``sqrt(ct) phi_bar``.
    """

    first: tuple[int, ...]
    second: tuple[int, ...]
    step_frame: ImmersionField
    step_data: PrincipalData | None
    bar_comb: CombescureData | None
    bar_omega: OmegaField | None
    sphere_row_residual: float = 0.0


def _check_split(split, k: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    first, second = (tuple(int(i) for i in part) for part in split)
    if sorted(first + second) != list(range(k)) or not first:
        raise SchemaError(f"split {split} is not a partition of range({k}) with a nonempty first block")
    return first, second


def decompose_transform(comb: CombescureData, omega: OmegaField, split, frame: ImmersionField, data: PrincipalData | None = None) -> Decomposition:
    """Split a vectorial transform along ``V = V_1 + V_2``.

    With ``j`` the first block and ``i`` the second::

        phi_bar   = phi_i - Omega_ij Omega_jj^{-1} phi_j
        G_bar     = P_j (G_i - G_j Omega_jj^{-t} Omega_ij^t),  P_j = I - G_j Omega_jj^{-1} G_j^t
        Omega_bar = Omega_ii - Omega_ij Omega_jj^{-1} Omega_ji

    and ``R_bar(R_j(f)) = R(f)``.  Raises ``SplitMismatch`` when the operator
    is not block diagonal for the split.
    """
    first, second = _check_split(split, comb.k)
    if comb.L is not None and second:
        lm = comb.L.entries
        off = max(np.abs(_block(lm, first, second)).max(), np.abs(_block(lm, second, first)).max())
        if off > 1e-12 * (1.0 + np.abs(lm).max()):
            raise SplitMismatch(f"the operator couples the blocks (off-diagonal size {off:.3g})")
    cj, oj = sub_comb(comb, first), sub_omega(omega, first)
    if comb.active is not None:
        cj = replace(cj, active=comb.active)
    step_frame = apply_vectorial_ribaucour(frame, cj, oj, with_frame=True)
    step_data = None if data is None else transformed_principal_data(data, cj, oj)
    if not second:
        return Decomposition(first, second, step_frame, step_data, None, None)

    oinv = oj.inverse()
    Om = omega.Omega
    K = _block(Om, second, first) @ oinv  # Omega_ij Omega_jj^{-1}
    phi = comb.phi
    phi_bar = phi[..., list(second)] - np.einsum("...ab,...b->...a", K, phi[..., list(first)])
    G = comb.components()
    Gi, Gj = G[..., list(second)], G[..., list(first)]
    Gt = Gi - Gj @ np.swapaxes(K, -1, -2)
    Gt = Gt - Gj @ (oinv @ (np.swapaxes(Gj, -1, -2) @ Gt))
    Q = frame_change(cj, oj)
    coords = np.swapaxes(Q, -1, -2) @ Gt  # in the basis of the new frame
    n, p = comb.n, comb.p
    gamma_bar = np.moveaxis(coords[..., :n, :], -2, 0)
    beta_bar = np.moveaxis(coords[..., n : n + p, :], -2, 0)
    sphere_res = 0.0
    if comb.c_tilde > 0:
        act = step_frame.active
        r = coords[..., n + p, :] - np.sqrt(comb.c_tilde) * phi_bar
        sphere_res = float(np.abs(r[act]).max()) if np.any(act) else 0.0
    L_bar = None if comb.L is None else analyze_operator(_block(comb.L.entries, second, second))
    active = step_frame.active
    bar_comb = CombescureData(phi_bar, gamma_bar, beta_bar, L_bar, comb.c, comb.c_tilde, active)
    Ob = _block(Om, second, second) - K @ _block(Om, first, second)
    base_K = _block(omega.base_value, second, first) @ np.linalg.inv(_block(omega.base_value, first, first))
    base = _block(omega.base_value, second, second) - base_K @ _block(omega.base_value, first, second)
    return Decomposition(first, second, step_frame, step_data, bar_comb, OmegaField(Ob, base, singular_ratio(Ob)), sphere_res)


def chain_transform(comb: CombescureData, omega: OmegaField, order, frame: ImmersionField, data: PrincipalData | None = None):
    """Apply the components of a vectorial transform one at a time.

    ``order`` lists component indices of ``comb``; each step transforms the
    current immersion by one scalar block and carries the remaining data
    over as bar data.  Returns the final frame and principal data (the
    latter only when ``data`` is given).
    """
    order = [int(i) for i in order]
    if sorted(order) != list(range(comb.k)):
        raise SchemaError(f"order {order} is not a permutation of range({comb.k})")
    remaining = list(range(comb.k))
    for idx in order:
        pos = remaining.index(idx)
        rest = [q for q in range(len(remaining)) if q != pos]
        dec = decompose_transform(comb, omega, ([pos], rest), frame, data)
        frame, data = dec.step_frame, dec.step_data
        comb, omega = dec.bar_comb, dec.bar_omega
        remaining = [remaining[q] for q in rest]
    return frame, data


# ---------------------------------------------------------------------------
# compatibility


def commutation_residual(frame: ImmersionField, comb: CombescureData, grid: Grid, border: int = 2) -> float:
    """Largest off-diagonal entry ``<beta_i, d_b X_a>`` (``a != b``) of the shape operators.

    All ``A_{beta_i}`` are diagonal in the principal frame exactly when these
    entries vanish, and then they commute pairwise.  Derivatives are
    fourth-order finite differences; ``border`` layers are skipped.
    """
    n = frame.n
    mask = interior_mask(grid, border)
    if comb.active is not None:
        mask = mask & comb.active
    if n < 2 or not np.any(mask):
        return 0.0
    dX = {(a, b): diff(frame.X[a], grid, b) for a in range(n) for b in range(n) if a != b}
    res = 0.0
    for i in range(comb.k):
        beta = combine(frame, np.concatenate([np.zeros((n,) + grid.shape), comb.beta[..., i], np.zeros((int(frame.ambient_curvature > 0),) + grid.shape)]))
        for d in dX.values():
            res = max(res, float(np.abs(inner(beta, d))[mask].max()))
    return res


# ---------------------------------------------------------------------------
# cubes


def _subsets(k: int):
    for r in range(k + 1):
        yield from itertools.combinations(range(k), r)


@dataclass(frozen=True)
class BianchiCube:
    """``k`` scalar transforms of one immersion and all ``2^k`` vertices.

    ``comb`` stacks the scalar data with ``L = diag(L_i)``; ``Omega`` is the
    algebraic matrix field; ``vertices`` maps sorted index tuples to
    immersions (the empty tuple is the seed).  ``active`` is the common
    domain on which every principal sub-block of ``Omega`` is invertible.
    """

    kind: str  # "L" or "P"
    params: tuple[float, ...]
    comb: CombescureData
    Omega: OmegaField
    frame: ImmersionField
    data: PrincipalData | None
    vertices: dict = field(repr=False)
    active: np.ndarray = field(repr=False)
    commutation: float = 0.0
    formula_gap: float = 0.0  # P-cubes: distance between the P and L forms of Omega

    @property
    def k(self) -> int:
        return len(self.params)

    def subset(self, alpha) -> tuple[CombescureData, OmegaField]:
        alpha = tuple(sorted(alpha))
        return replace(sub_comb(self.comb, alpha), active=self.active), sub_omega(self.Omega, alpha)

    def vertex_data(self, alpha) -> PrincipalData:
        """Principal data of the vertex ``alpha`` (needs the seed data)."""
        if self.data is None:
            raise SchemaError("the cube was built without principal data")
        alpha = tuple(sorted(alpha))
        if not alpha:
            return self.data
        return transformed_principal_data(self.data, *self.subset(alpha))

    def diagonal_residual(self) -> float:
        """``max |Omega_ii - |G_i|^2 / 2|`` over the active domain."""
        g = self.comb.gram()
        om = self.Omega.Omega
        r = max(float(np.abs(om[..., i, i] - 0.5 * g[..., i, i])[self.active].max()) for i in range(self.k))
        return r

    def chain_vertex(self, order) -> ImmersionField:
        """The vertex ``sorted(order)`` reached by scalar steps in the given order."""
        alpha = tuple(sorted(order))
        comb, om = self.subset(alpha)
        local = [alpha.index(i) for i in order]
        frame, _ = chain_transform(comb, om, local, self.frame)
        return frame

    def path_independence(self) -> dict:
        """Largest gap between the algebraic vertex and each of its scalar chains."""
        out = {}
        for alpha in _subsets(self.k):
            if not alpha:
                continue
            ref = self.vertices[alpha].f
            worst = 0.0
            for order in itertools.permutations(alpha):
                fr = self.chain_vertex(order)
                mask = self.active & fr.active
                if np.any(mask):
                    worst = max(worst, float(np.abs(fr.f - ref)[mask].max()))
            out[alpha] = worst
        return out


def _assemble(kind, params, comb, Om, frame, data, with_frames, commutation, gap=0.0) -> BianchiCube:
    k = comb.k
    base = Om[tuple(s // 2 for s in Om.shape[:-2])].copy()
    omega = OmegaField(Om, base, singular_ratio(Om))
    active = np.ones(Om.shape[:-2], dtype=bool) if comb.active is None else comb.active.copy()
    for alpha in _subsets(k):
        if alpha:
            active &= sub_omega(omega, alpha).active
    if frame.active is not None:
        active &= frame.active
    comb = replace(comb, active=active)
    vertices = {(): frame}
    for alpha in _subsets(k):
        if alpha:
            vertices[alpha] = apply_vectorial_ribaucour(frame, sub_comb(comb, alpha), sub_omega(omega, alpha), with_frames)
    return BianchiCube(kind, tuple(float(x) for x in params), comb, omega, frame, data, vertices, active, commutation, gap)


def _check_compatible(frame, comb, data, tol):
    if data is None:
        return 0.0
    res = commutation_residual(frame, comb, data.grid)
    if res > tol:
        raise NotCompatible(f"shape operators of the scalar transforms do not commute (residual {res:.3g})")
    return res


def cube_omega_L(comb: CombescureData, L_list) -> np.ndarray:
    """``Omega_ij = (rho_ij - L_i <G_i, G_j>) / (L_j - L_i)`` and ``Omega_ii = |G_i|^2 / 2``."""
    g, rho = comb.gram(), comb.rho()
    k = len(L_list)
    Om = np.empty(g.shape)
    for i in range(k):
        for j in range(k):
            if i == j:
                Om[..., i, i] = 0.5 * g[..., i, i]
            else:
                Om[..., i, j] = (rho[..., i, j] - L_list[i] * g[..., i, j]) / (L_list[j] - L_list[i])
    return Om


def cube_omega_P(comb: CombescureData, P_list) -> np.ndarray:
    """``Omega_ij = (1 + P_j^2) / (P_j (P_i + P_j)) rho_ij``."""
    rho = comb.rho()
    P = np.asarray(P_list, dtype=float)
    scale = (1.0 + P[None, :] ** 2) / (P[None, :] * (P[:, None] + P[None, :]))
    return rho * scale


def build_cube_L(scalars, L_list, c: float, c_tilde: float, frame: ImmersionField, data: PrincipalData | None = None, with_frames: bool = False, tol: float = COMMUTE_TOL) -> BianchiCube:
    """Bianchi cube from scalar L_i-transforms with the algebraic ``Omega``.

    Raises ``DuplicateOperator`` when two ``L_i`` coincide and
    ``NotCompatible`` when the shape operators fail to commute (checked
    when ``data`` is given).
    """
    L_list = [float(x) for x in L_list]
    if len(L_list) != len(scalars):
        raise SchemaError("one L_i per scalar transform is needed")
    for a, b in itertools.combinations(range(len(L_list)), 2):
        if abs(L_list[a] - L_list[b]) <= DUPLICATE_TOL * (1.0 + abs(L_list[a])):
            raise DuplicateOperator(f"L_{a + 1} = L_{b + 1} = {L_list[a]:.6g}")
    comb = stack_scalars(scalars, L_list)
    if (comb.c, comb.c_tilde) != (float(c), float(c_tilde)):
        raise SchemaError(f"scalar data have (c, ct) = {(comb.c, comb.c_tilde)}, expected {(c, c_tilde)}")
    res = _check_compatible(frame, comb, data, tol)
    return _assemble("L", L_list, comb, cube_omega_L(comb, L_list), frame, data, with_frames, res)


def build_cube_P(scalars, P_list, frame: ImmersionField, data: PrincipalData | None = None, with_frames: bool = False, tol: float = COMMUTE_TOL) -> BianchiCube:
    """Bianchi cube from scalar P_i-transforms (``L_i = P_i^2 / (1 + P_i^2)``)."""
    P_list = [float(x) for x in P_list]
    if len(P_list) != len(scalars):
        raise SchemaError("one P_i per scalar transform is needed")
    if any(P == 0 for P in P_list):
        raise SchemaError("every P_i must be nonzero")
    for a, b in itertools.combinations(range(len(P_list)), 2):
        if abs(abs(P_list[a]) - abs(P_list[b])) <= DUPLICATE_TOL * (1.0 + abs(P_list[a])):
            raise DuplicateOperator(f"P_{a + 1} = +-P_{b + 1} = {P_list[a]:.6g}")
    L_list = [P * P / (1.0 + P * P) for P in P_list]
    comb = stack_scalars(scalars, L_list)
    res = _check_compatible(frame, comb, data, tol)
    Om = cube_omega_P(comb, P_list)
    act = np.ones(Om.shape[:-2], dtype=bool) if comb.active is None else comb.active
    gap = float(np.abs(Om - cube_omega_L(comb, L_list))[act].max()) if np.any(act) else 0.0
    return _assemble("P", P_list, comb, Om, frame, data, with_frames, res, gap)


def cube_manifest(cube: BianchiCube, paths: dict | None = None) -> dict:
    """JSON-ready summary: vertices, active fractions and path-independence residuals."""
    if paths is None:
        paths = cube.path_independence()
    return {
        "kind": cube.kind,
        "k": cube.k,
        "params": list(cube.params),
        "active_fraction": float(cube.active.mean()),
        "commutation_residual": cube.commutation,
        "omega_diagonal_residual": cube.diagonal_residual(),
        "omega_formula_gap": cube.formula_gap,
        "vertices": [
            {"subset": [i + 1 for i in alpha], "path_independence": paths.get(alpha, 0.0)}
            for alpha in _subsets(cube.k)
        ],
    }
