"""Explicit seed immersions with principal data and frames in closed form.

* ``clifford_torus``: product of unit circles in ``R^{2n}``, a flat pair with
  ``v = 1``, ``h = 0`` and ``p = n``.
* ``sphere_torus``: flat torus in the unit sphere ``S^{2n-1}``, a curved
  triple with ``c = 0``, ``ct = 1``.
* ``horizontal_vacuum``: the degenerate horizontal curve-like seed
  ``v = (1, 0, ..., 0)``, ``h = 0``, ``rho = sqrt(c) v`` in ``S^{2n+1}(c)``.
* ``round_sphere_chart``: ``du_1^2 + cos^2 u_1 du_2^2`` (curvature one).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .geomgrid import Grid, ImmersionField, Kind, PrincipalData


@dataclass(frozen=True)
class Seed:
    data: PrincipalData
    frame: ImmersionField

    @property
    def grid(self) -> Grid:
        return self.data.grid


def _assemble(grid: Grid, dim: int, parts) -> np.ndarray:
    """Full vector field from ``(coordinate, values)`` pairs."""
    out = np.zeros(grid.shape + (dim,))
    for coord, vals in parts:
        out[..., coord] = vals
    return out


def clifford_torus(grid: Grid) -> Seed:
    """Product of unit circles ``f = sum_j (cos u_j, sin u_j)`` in ``R^{2n}``.

    Tangent ``X_j = (-sin u_j, cos u_j)``, normal ``xi_j = -(cos u_j, sin u_j)``
    in the j-th plane; then ``d_j X_j = xi_j`` and ``d_j xi_j = -X_j``.
    """
    n = grid.n
    dim = 2 * n
    u = grid.coords()
    f = _assemble(grid, dim, [(2 * j + s, fn(u[j])) for j in range(n) for s, fn in ((0, np.cos), (1, np.sin))])
    X = np.stack([_assemble(grid, dim, [(2 * j, -np.sin(u[j])), (2 * j + 1, np.cos(u[j]))]) for j in range(n)])
    xi = np.stack([_assemble(grid, dim, [(2 * j, -np.cos(u[j])), (2 * j + 1, -np.sin(u[j]))]) for j in range(n)])
    data = PrincipalData(
        Kind.FlatPair,
        grid,
        v=grid.full(np.ones((n,) + (1,) * n), 1),
        h=grid.full(np.zeros((n, n) + (1,) * n), 2),
        c=0.0,
        c_tilde=0.0,
        p=n,
    )
    return Seed(data, ImmersionField(f, X, xi))


def helmert_basis(n: int) -> np.ndarray:
    """Orthonormal basis (rows) of the vectors in ``R^n`` with zero sum."""
    rows = []
    for r in range(1, n):
        a = np.zeros(n)
        a[:r] = 1.0
        a[r] = -float(r)
        rows.append(a / np.linalg.norm(a))
    return np.array(rows).reshape(n - 1, n)


def sphere_torus(grid: Grid) -> Seed:
    """Flat torus ``f = n^{-1/2} sum_j (cos u_j, sin u_j)`` in the unit sphere.

    Curved triple with ``c = 0``, ``ct = 1``, ``v_i = n^{-1/2}``, ``h = 0``
    and ``V_ir = -a_ri`` where ``a_r`` are the rows of ``helmert_basis(n)``;
    the parallel normal frame is ``xi_r = sum_j a_rj N_j`` with
    ``N_j = (cos u_j, sin u_j)`` in the j-th plane.
    """
    n = grid.n
    dim = 2 * n
    u = grid.coords()
    a = helmert_basis(n)
    p = n - 1
    N = np.stack([_assemble(grid, dim, [(2 * j, np.cos(u[j])), (2 * j + 1, np.sin(u[j]))]) for j in range(n)])
    X = np.stack([_assemble(grid, dim, [(2 * j, -np.sin(u[j])), (2 * j + 1, np.cos(u[j]))]) for j in range(n)])
    f = N.sum(axis=0) / np.sqrt(n)
    xi = np.einsum("rj,j...->r...", a, N)
    V = -a.T  # V[i, r] = -a[r, i]
    data = PrincipalData(
        Kind.CurvedTriple,
        grid,
        v=grid.full(np.full((n,) + (1,) * n, 1.0 / np.sqrt(n)), 1),
        h=grid.full(np.zeros((n, n) + (1,) * n), 2),
        V=grid.full(V.reshape((n, p) + (1,) * n), 2),
        c=0.0,
        c_tilde=1.0,
        p=p,
    )
    return Seed(data, ImmersionField(f, X, xi, ambient_curvature=1.0))


def horizontal_vacuum(grid: Grid, c: float = 1.0) -> Seed:
    """Degenerate horizontal seed in ``S^{2n+1}(c)`` inside ``C^{n+1}``.

    ``F`` and ``X_1`` solve ``d_1 F = X_1``, ``d_1 X_1 = i X_1 - c F`` in the
    plane spanned by ``E_0, E_1``; ``X_j = e^{i u_j} E_j`` for ``j >= 2``.
    """
    n = grid.n
    u = grid.coords()
    gen = np.array([[0.0, 1.0], [-c, 1j]])
    u1 = grid.axis(0)
    # columns: (F, X_1) in the basis (E_0, E_1); initial F = E_0/sqrt(c), X_1 = E_1
    init = np.array([[1.0 / np.sqrt(c), 0.0], [0.0, 1.0]], dtype=complex)
    sol = np.stack([expm(t * gen) @ init for t in u1])  # sol[t][block, basis]
    shp = [1] * n
    shp[0] = grid.shape[0]
    F = np.zeros((grid.shape[0],) + (1,) * (n - 1) + (n + 1,), dtype=complex)
    X1 = np.zeros_like(F)
    F[..., 0] = sol[:, 0, 0].reshape(shp)
    F[..., 1] = sol[:, 0, 1].reshape(shp)
    X1[..., 0] = sol[:, 1, 0].reshape(shp)
    X1[..., 1] = sol[:, 1, 1].reshape(shp)
    Xs = [np.broadcast_to(X1, grid.shape + (n + 1,))]
    for j in range(1, n):
        e = np.zeros((1,) * n + (n + 1,), dtype=complex)
        e[..., j + 1] = 1.0
        Xs.append(np.broadcast_to(np.exp(1j * u[j])[..., None] * e, grid.shape + (n + 1,)))
    X = np.stack(Xs)
    v = np.zeros((n,) + (1,) * n)
    v[0] = 1.0
    data = PrincipalData(
        Kind.HorizontalTriple,
        grid,
        v=grid.full(v, 1),
        h=grid.full(np.zeros((n, n) + (1,) * n), 2),
        rho=grid.full(np.sqrt(c) * v, 1),
        c=c,
        c_tilde=c,
        p=n + 1,
        degenerate=True,
    )
    frame = ImmersionField(np.broadcast_to(F, grid.shape + (n + 1,)), X, None, True, c)
    return Seed(data, frame)


def round_sphere_chart(grid: Grid) -> PrincipalData:
    """Metric ``du_1^2 + cos^2(u_1) du_2^2`` of the unit sphere (n = 2).

    Only ``v`` is meaningful; it serves as a curvature fixture.
    """
    if grid.n != 2:
        raise ValueError("round_sphere_chart is two dimensional")
    u1 = grid.coord(0)
    v = np.stack(np.broadcast_arrays(np.ones_like(u1) + 0 * grid.coord(1), np.cos(u1) + 0 * grid.coord(1)))
    h = np.zeros((2, 2) + grid.shape)
    h[0, 1] = -np.sin(u1) + 0 * grid.coord(1)  # h_12 = d_1 v_2 / v_1; h_21 = 0
    return PrincipalData(Kind.FlatPair, grid, v=v, h=h, c=1.0, c_tilde=1.0, p=2)
