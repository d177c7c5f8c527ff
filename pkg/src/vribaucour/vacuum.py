"""Closed-form transforms of the vacuum, the degenerate flat Lagrangian seed.

The vacuum has ``v = (1, 0, ..., 0)`` and ``h = 0``; its immersion is
``f = -i e^{i u_1} E_1`` with unit tangents ``X_j = e^{i u_j} E_j`` in
``C^n``.  Everything here is evaluated from explicit formulas, with no
integration, and serves as ground truth for the P-transform pipelines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import SchemaError
from .geomgrid import Grid, ImmersionField, Kind, PrincipalData
from .lagrangian import PTransformSpec, Variant

NONDIAG_P = np.array([[1.0, 1.0], [-1.0, 1.0]])
D_MIN = 1e-8


@dataclass(frozen=True)
class VacuumSeed:
    n: int
    data: PrincipalData
    frame: ImmersionField

    @property
    def grid(self) -> Grid:
        return self.data.grid


def _unit(grid: Grid, j: int) -> np.ndarray:
    """``E_j`` shaped to broadcast against ``grid.shape + (n,)``."""
    e = np.zeros((1,) * grid.n + (grid.n,), dtype=complex)
    e[..., j] = 1.0
    return e


def _phase(grid: Grid, j: int) -> np.ndarray:
    return np.exp(1j * grid.coord(j))[..., None]


def vacuum_seed(n: int, grid: Grid) -> VacuumSeed:
    """The vacuum on ``grid`` (all fields are zero-stride broadcast views)."""
    if n < 2:
        raise SchemaError("the vacuum needs n >= 2")
    if grid.n != n:
        raise SchemaError(f"grid has dimension {grid.n}, expected {n}")
    shape = grid.shape + (n,)
    f = np.broadcast_to(-1j * _phase(grid, 0) * _unit(grid, 0), shape)
    X = tuple(np.broadcast_to(_phase(grid, j) * _unit(grid, j), shape) for j in range(n))
    v = np.zeros((n,) + (1,) * n)
    v[0] = 1.0
    data = PrincipalData(
        Kind.LagrangianPair,
        grid,
        v=grid.full(v, 1),
        h=grid.full(np.zeros((n, n) + (1,) * n), 2),
        c=0.0,
        c_tilde=0.0,
        p=n,
        degenerate=True,
    )
    return VacuumSeed(n, data, ImmersionField(f, X, None, complex_structure=True))


# ---------------------------------------------------------------------------
# scalar transforms


def scalar_spec(P_i: float, n: int, pstar: bool = True) -> PTransformSpec:
    """Base data ``phi(0) = -P_i``, ``gamma_j(0) = 1`` of the scalar transform."""
    variant = Variant.PStar if pstar else Variant.FlatLagrangian
    return PTransformSpec([[P_i]], np.ones((n, 1)), np.array([-float(P_i)]), variant)


def scalar_data(P_i: float, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """``phi = -P_i e^{-u_1/P_i}`` (grid shape) and ``gamma_j = e^{-u_j/P_i}`` (n, *grid)."""
    u = grid.coords()
    phi = np.broadcast_to(-P_i * np.exp(-u[0] / P_i), grid.shape)
    gamma = np.stack([np.broadcast_to(np.exp(-uj / P_i), grid.shape) for uj in u])
    return phi, gamma


def scalar_P_closed_form(P_i: float, grid: Grid, n: int | None = None) -> ImmersionField:
    """Scalar ``P_i``-transform of the vacuum.

    ``f_i = -i e^{iu_1} E_1 + 2 P_i (1 + i P_i) e^{-u_1/P_i}
    / ((1 + P_i^2) sum_j e^{-2u_j/P_i}) sum_j e^{(-1 + i P_i) u_j / P_i} E_j``.
    """
    if P_i == 0:
        raise SchemaError("P_i must be nonzero")
    n = grid.n if n is None else n
    if grid.n != n:
        raise SchemaError(f"grid has dimension {grid.n}, expected {n}")
    u = grid.coords()
    denom = sum(np.exp(-2.0 * uj / P_i) for uj in u)
    pref = 2.0 * P_i * (1.0 + 1j * P_i) * np.exp(-u[0] / P_i) / ((1.0 + P_i**2) * denom)
    f = np.zeros(grid.shape + (n,), dtype=complex)
    f[..., 0] = -1j * np.exp(1j * u[0])
    for j in range(n):
        f[..., j] += pref * np.exp((-1.0 + 1j * P_i) * u[j] / P_i)
    return ImmersionField(f, np.zeros((0,) + f.shape, dtype=complex), None, complex_structure=True)


def cube_omega_entry(P_i: float, P_j: float, grid: Grid) -> np.ndarray:
    """``Omega_ij = P_i (1 + P_j^2) / (P_i + P_j) sum_l e^{-((P_i + P_j)/(P_i P_j)) u_l}``."""
    s = (P_i + P_j) / (P_i * P_j)
    return P_i * (1.0 + P_j**2) / (P_i + P_j) * sum(np.exp(-s * ul) for ul in grid.coords())


def cube_vertex_closed_form(P_list, subset, grid: Grid) -> np.ndarray:
    """Vertex ``f - F^a (Omega^a)^{-1} phi^a`` of the vacuum cube for the index set ``subset``.

    ``F_i = sum_j (1 + i P_i) gamma^i_j e^{i u_j} E_j``.  Returns positions of
    shape ``(*grid, n)``.
    """
    n = grid.n
    idx = list(subset)
    r = len(idx)
    f = np.zeros(grid.shape + (n,), dtype=complex)
    f[..., 0] = -1j * np.exp(1j * grid.coord(0))
    if r == 0:
        return f
    Om = np.empty(grid.shape + (r, r))
    phis = np.empty(grid.shape + (r,))
    Fs = np.empty((r,) + grid.shape + (n,), dtype=complex)
    for a, i in enumerate(idx):
        phi, gam = scalar_data(P_list[i], grid)
        phis[..., a] = phi
        for j in range(n):
            Fs[a, ..., j] = (1.0 + 1j * P_list[i]) * gam[j] * np.exp(1j * grid.coord(j))
        for b, jj in enumerate(idx):
            Om[..., a, b] = cube_omega_entry(P_list[i], P_list[jj], grid)
    w = np.linalg.solve(Om, phis[..., None])[..., 0]
    return f - np.einsum("a...k,...a->...k", Fs, w)


# ---------------------------------------------------------------------------
# the non-diagonalizable example


def nondiag_spec(n: int) -> PTransformSpec:
    """``P = [[1, 1], [-1, 1]]`` with ``gamma_j(0) = e_1`` and the P* base value of ``phi``."""
    g0 = np.tile([1.0, 0.0], (n, 1))
    return PTransformSpec(NONDIAG_P, g0, None, Variant.PStar)


def nondiag_gamma(grid: Grid) -> np.ndarray:
    """``gamma_j = e^{-u_j/2} (cos(u_j/2), sin(u_j/2))``, shape (n, *grid, 2)."""
    out = np.empty((grid.n,) + grid.shape + (2,))
    for j, uj in enumerate(grid.coords()):
        out[j, ..., 0] = np.exp(-uj / 2) * np.cos(uj / 2)
        out[j, ..., 1] = np.exp(-uj / 2) * np.sin(uj / 2)
    return out


def nondiag_gamma_expm(grid: Grid, j: int) -> np.ndarray:
    """``exp(-u_j (P^t)^{-1}) e_1`` along axis ``j`` by matrix exponential, shape (m, 2)."""
    m = np.linalg.inv(NONDIAG_P.T)
    return np.array([expm(-t * m) @ np.array([1.0, 0.0]) for t in grid.axis(j)])


def nondiag_omega(grid: Grid) -> np.ndarray:
    """``Omega = sum_l e^{-u_l} Omega_l / 4``, shape (*grid, 2, 2)."""
    om = np.zeros(grid.shape + (2, 2))
    for ul in grid.coords():
        c, s, e = np.cos(ul), np.sin(ul), np.exp(-ul) / 4
        om[..., 0, 0] += e * (3 + c - 2 * s)
        om[..., 0, 1] += e * (1 + 2 * c + s)
        om[..., 1, 0] += e * (-1 + 2 * c + s)
        om[..., 1, 1] += e * (3 - c + 2 * s)
    return om


def nondiag_denominator(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """``G = sum_l e^{-u_l}`` and ``D = 2 G^2 - sum_{l,j} e^{-(u_l + u_j)} cos(u_l - u_j)``."""
    u = grid.coords()
    G = sum(np.exp(-ul) for ul in u)
    S = sum(np.exp(-(ul + uj)) * np.cos(ul - uj) for ul in u for uj in u)
    return G, 2 * G**2 - S


def nondiag_coefficients(grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients ``(a_j, b_j)`` (each of shape (n, *grid)) and the validity mask ``|D| > D_MIN``."""
    u = grid.coords()
    G, D = nondiag_denominator(grid)
    ok = np.abs(D) > D_MIN
    Dinv = np.where(ok, 1.0 / np.where(ok, D, 1.0), 0.0)
    a, b = [], []
    for uj in u:
        U, V = (u[0] + uj) / 2, (u[0] - uj) / 2
        sa = sum(np.exp(-ul) * (np.sin(ul - U) - 3 * np.cos(ul - U)) for ul in u)
        sb = sum(np.exp(-ul) * (np.sin(ul - U) + 2 * np.cos(ul - U)) for ul in u)
        pre = Dinv * np.exp(-U)
        a.append(np.broadcast_to(0.8 * pre * ((2 * np.cos(V) - 4 * np.sin(V)) * G + sa), grid.shape))
        b.append(np.broadcast_to(1.6 * pre * ((3 * np.cos(V) - np.sin(V)) * G - sb), grid.shape))
    return np.stack(a), np.stack(b), np.broadcast_to(ok, grid.shape)


def nondiag_closed_form(grid: Grid, n: int | None = None) -> ImmersionField:
    """``f~ = -i e^{iu_1} E_1 + sum_j (a_j + i b_j) e^{i u_j} E_j``; nodes with ``D`` near zero are inactive."""
    n = grid.n if n is None else n
    if grid.n != n:
        raise SchemaError(f"grid has dimension {grid.n}, expected {n}")
    a, b, ok = nondiag_coefficients(grid)
    f = np.zeros(grid.shape + (n,), dtype=complex)
    f[..., 0] = -1j * np.exp(1j * grid.coord(0))
    for j in range(n):
        f[..., j] += (a[j] + 1j * b[j]) * np.exp(1j * grid.coord(j))
    return ImmersionField(f, np.zeros((0,) + f.shape, dtype=complex), None, complex_structure=True, active=np.array(ok))
