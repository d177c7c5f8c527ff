"""Principal-coordinate data on uniform grids.

Layout conventions
------------------
* Scalar data carry component axes first: ``v`` has shape ``(n, *grid)``,
  ``h`` has shape ``(n, m, *grid)``, ``V`` has shape ``(n, p, *grid)``.
* Vector-valued fields carry the ambient (or parameter-space) axis last:
  ``f`` has shape ``(*grid, N)`` and ``X`` has shape ``(n, *grid, N)``.
* Frames with a complex structure store complex vectors in ``C^N``; the real
  picture interleaves ``(x1, y1, x2, y2, ...)``.

Arrays may be zero-stride broadcast views (the vacuum seed uses them to keep
large grids cheap); nothing here writes into its inputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import IntegrationDrift, SchemaError
from .sweep import Field, rk4_sweep

TOL_FRAME = 1e-8


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid ``prod_a [lo_a, hi_a]`` with ``steps[a]`` nodes per axis."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    steps: tuple[int, ...]

    def __post_init__(self):
        lo, hi, st = tuple(map(float, self.lo)), tuple(map(float, self.hi)), tuple(map(int, self.steps))
        if not (len(lo) == len(hi) == len(st)) or len(st) == 0:
            raise SchemaError("grid bounds and steps must have the same positive length")
        if any(s < 3 for s in st):
            raise SchemaError("every axis needs at least 3 nodes")
        if any(b <= a for a, b in zip(lo, hi)):
            raise SchemaError("grid upper bounds must exceed lower bounds")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "steps", st)

    @classmethod
    def cube(cls, n: int, half_width: float = 1.0, spacing: float = 1e-2) -> "Grid":
        """``[-w, w]^n`` with the requested spacing (node count made odd)."""
        m = int(round(2 * half_width / spacing))
        if m % 2:
            m += 1
        return cls((-half_width,) * n, (half_width,) * n, (m + 1,) * n)

    @property
    def n(self) -> int:
        return len(self.steps)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.steps

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / (s - 1) for a, b, s in zip(self.lo, self.hi, self.steps))

    @property
    def center_index(self) -> tuple[int, ...]:
        return tuple(s // 2 for s in self.steps)

    @property
    def size(self) -> int:
        return int(np.prod(self.steps))

    def axis(self, a: int) -> np.ndarray:
        return np.linspace(self.lo[a], self.hi[a], self.steps[a])

    def coord(self, a: int) -> np.ndarray:
        """Coordinate ``u_a`` shaped to broadcast against the grid."""
        shp = [1] * self.n
        shp[a] = self.steps[a]
        return self.axis(a).reshape(shp)

    def coords(self) -> list[np.ndarray]:
        return [self.coord(a) for a in range(self.n)]

    def point(self, index) -> np.ndarray:
        return np.array([self.axis(a)[i] for a, i in enumerate(index)])

    def slab(self, start: int, stop: int) -> "Grid":
        """Sub-grid of the nodes ``start:stop`` along axis 0."""
        ax = self.axis(0)
        return Grid((ax[start],) + self.lo[1:], (ax[stop - 1],) + self.hi[1:], (stop - start,) + self.steps[1:])

    def full(self, arr, lead: int = 0) -> np.ndarray:
        """Broadcast ``arr`` (components first) to full grid shape without copying."""
        arr = np.asarray(arr)
        comp = arr.shape[:lead]
        return np.broadcast_to(arr, comp + self.shape)


def vanishes(arr) -> bool:
    """True when ``arr`` is identically zero; broadcast axes are read once."""
    arr = np.asarray(arr)
    view = arr[tuple(0 if st == 0 else slice(None) for st in arr.strides)]
    return not np.any(view)


# ---------------------------------------------------------------------------
# finite differences


def diff(field_: np.ndarray, grid: Grid, axis: int, lead: int = 0, order: int = 4) -> np.ndarray:
    """Finite-difference derivative along a grid axis.

    Fourth order: central five-point stencil inside, one-sided five-point
    stencils on the two outermost layers.  ``order=6`` switches the nodes at
    least three layers from the boundary to the seven-point central stencil.
    ``lead`` component axes precede the grid axes.
    """
    f = np.asarray(field_)
    ax = lead + axis
    h = grid.spacing[axis]
    if f.strides[ax] == 0:
        return np.zeros(f.shape, dtype=f.dtype)
    n = f.shape[ax]
    if n < 5:
        return np.gradient(f, h, axis=ax, edge_order=2)
    fm = np.moveaxis(f, ax, 0)
    d = np.empty(fm.shape, dtype=np.result_type(f.dtype, float))
    d[2:-2] = (fm[:-4] - 8 * fm[1:-3] + 8 * fm[3:-1] - fm[4:]) / (12 * h)
    d[0] = (-25 * fm[0] + 48 * fm[1] - 36 * fm[2] + 16 * fm[3] - 3 * fm[4]) / (12 * h)
    d[1] = (-3 * fm[0] - 10 * fm[1] + 18 * fm[2] - 6 * fm[3] + fm[4]) / (12 * h)
    d[-1] = -(-25 * fm[-1] + 48 * fm[-2] - 36 * fm[-3] + 16 * fm[-4] - 3 * fm[-5]) / (12 * h)
    d[-2] = -(-3 * fm[-1] - 10 * fm[-2] + 18 * fm[-3] - 6 * fm[-4] + fm[-5]) / (12 * h)
    if order == 6 and n >= 7:
        d[3:-3] = (-fm[:-6] + 9 * fm[1:-5] - 45 * fm[2:-4] + 45 * fm[4:-2] - 9 * fm[5:-1] + fm[6:]) / (60 * h)
    return np.moveaxis(d, 0, ax)


def interior_mask(grid: Grid, width: int = 2) -> np.ndarray:
    m = np.ones(grid.shape, dtype=bool)
    for a in range(grid.n):
        sl = [slice(None)] * grid.n
        sl[a] = slice(0, width)
        m[tuple(sl)] = False
        sl[a] = slice(grid.shape[a] - width, None)
        m[tuple(sl)] = False
    return m


# ---------------------------------------------------------------------------
# principal data


class Kind(enum.Enum):
    FlatPair = "FlatPair"
    CurvedTriple = "CurvedTriple"
    LagrangianPair = "LagrangianPair"
    HorizontalTriple = "HorizontalTriple"
    HorizontalPair = "HorizontalPair"


@dataclass(frozen=True)
class PrincipalData:
    """Principal-coordinate data ``(v, h[, V][, rho])`` sampled on a grid.

    Attributes
    ----------
    kind : Kind
    grid : Grid
    v : ndarray, shape (n, *grid)
    h : ndarray, shape (n, m, *grid)
        ``m = max(n, p)`` for ``FlatPair`` (normal connection columns beyond
        ``n``), otherwise ``m = n``.  Diagonal entries are ignored.
    V : ndarray, shape (n, p, *grid), optional
        Only for ``CurvedTriple``.
    rho : ndarray, shape (n, *grid), optional
        Only for ``HorizontalTriple``.
    c, c_tilde : float
        Intrinsic and ambient curvature.
    p : int
        Codimension carried by the normal frame.
    degenerate : bool
        Marks seeds with identically vanishing ``v_i`` (the vacuum).
    active : ndarray of bool, optional
        Nodes on which the data are valid (``v_i != 0``, invertibility).
    """

    kind: Kind
    grid: Grid
    v: np.ndarray
    h: np.ndarray
    V: np.ndarray | None = None
    rho: np.ndarray | None = None
    c: float = 0.0
    c_tilde: float = 0.0
    p: int = 0
    signature: tuple[int, ...] = ()
    degenerate: bool = False
    active: np.ndarray | None = None

    def __post_init__(self):
        n = self.grid.n
        g = self.grid.shape
        if self.v.shape != (n,) + g:
            raise SchemaError(f"v must have shape {(n,) + g}, got {self.v.shape}")
        if self.h.ndim != 2 + n or self.h.shape[0] != n or self.h.shape[2:] != g:
            raise SchemaError(f"h must have shape (n, m, *grid), got {self.h.shape}")
        if self.kind is Kind.CurvedTriple:
            if self.V is None or self.V.shape[:1] != (n,) or self.V.shape[2:] != g:
                raise SchemaError("CurvedTriple needs V of shape (n, p, *grid)")
        if self.kind is Kind.HorizontalTriple:
            if self.rho is None or self.rho.shape != (n,) + g:
                raise SchemaError("HorizontalTriple needs rho of shape (n, *grid)")
        if self.kind is Kind.FlatPair and self.h.shape[1] < max(n, self.p):
            raise SchemaError("FlatPair h needs max(n, p) columns")
        if not self.signature:
            object.__setattr__(self, "signature", (1,) * self.p)

    @property
    def n(self) -> int:
        return self.grid.n

    def with_active(self, mask) -> "PrincipalData":
        act = mask if self.active is None else (self.active & mask)
        return replace(self, active=act)


@dataclass(frozen=True)
class ResidualReport:
    """Maximum absolute residual of each equation family."""

    residuals: dict[str, float] = field(default_factory=dict)

    @property
    def max(self) -> float:
        return max(self.residuals.values(), default=0.0)

    def __getitem__(self, key):
        return self.residuals[key]


def _masked_max(arr, mask) -> float:
    a = np.abs(np.asarray(arr))
    if mask is not None:
        a = a[..., mask] if a.ndim > mask.ndim else a[mask]
    return float(a.max()) if a.size else 0.0


def residual_system(data: PrincipalData, mask: np.ndarray | None = None, border: int = 2) -> ResidualReport:
    """Finite-difference residuals of the PDE system attached to ``data.kind``.

    Derivatives are fourth order; by default the two outermost node layers
    (one-sided stencils) and inactive nodes are excluded.
    """
    grid, n = data.grid, data.n
    v, h = data.v, data.h
    c = data.c
    m = interior_mask(grid, border) if border else np.ones(grid.shape, dtype=bool)
    if data.active is not None:
        m = m & data.active
    if mask is not None:
        m = m & mask

    dcache: dict = {}

    def d(name, arr, axis):
        key = (name, axis)
        if key not in dcache:
            dcache[key] = diff(arr, grid, axis)
        return dcache[key]

    res: dict[str, list] = {}

    def add(key, val):
        res.setdefault(key, []).append(_masked_max(val, m))

    kind = data.kind
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]

    # (i) d_j v_i = h_ji v_j  (same equation, index names vary by system)
    for i, j in pairs:
        add("v_derivative", d(f"v{i}", v[i], j) - h[j, i] * v[j])

    if kind is Kind.FlatPair:
        pcols = h.shape[1]
        for i, j in pairs:
            if i < j:
                gauss = d(f"h{i}{j}", h[i, j], i) + d(f"h{j}{i}", h[j, i], j) + c * v[i] * v[j]
                ricci = d(f"h{i}{j}", h[i, j], j) + d(f"h{j}{i}", h[j, i], i)
                for ell in range(n):
                    if ell not in (i, j):
                        gauss = gauss + h[ell, i] * h[ell, j]
                for r in range(data.p):
                    if r not in (i, j):
                        ricci = ricci + h[i, r] * h[j, r]
                add("gauss", gauss)
                add("ricci", ricci)
            for r in range(min(pcols, max(data.p, n))):
                if r not in (i, j):
                    add("codazzi", d(f"h{i}{r}", h[i, r], j) - h[i, j] * h[j, r])
    elif kind is Kind.CurvedTriple:
        V = data.V
        p = V.shape[1]
        for i, j in pairs:
            if i < j:
                gauss = d(f"h{i}{j}", h[i, j], i) + d(f"h{j}{i}", h[j, i], j) + c * v[i] * v[j]
                for ell in range(n):
                    if ell not in (i, j):
                        gauss = gauss + h[ell, i] * h[ell, j]
                add("gauss", gauss)
            for r in range(p):
                # d_l V_ir = h_li V_lr  (l = j here)
                add("codazzi_V", d(f"V{i}{r}", V[i, r], j) - h[j, i] * V[j, r])
            for ell in range(n):
                if ell not in (i, j):
                    add("codazzi", d(f"h{i}{ell}", h[i, ell], j) - h[i, j] * h[j, ell])
        vhat = np.einsum("ir...,jr...->ij...", V, V) + (data.c_tilde - data.c) * np.einsum("i...,j...->ij...", v, v)
        add("orthogonality", vhat - np.eye(n).reshape((n, n) + (1,) * n))
    elif kind in (Kind.LagrangianPair, Kind.HorizontalPair):
        for i, j in pairs:
            s = sum(d(f"h{i}{j}", h[i, j], ell) for ell in range(n))
            if kind is Kind.HorizontalPair:
                s = s + c * v[i] * v[j]
            add("flow", s)
            add("symmetry", h[i, j] - h[j, i])
            for ell in range(n):
                if ell not in (i, j):
                    add("codazzi", d(f"h{i}{j}", h[i, j], ell) - h[i, ell] * h[j, ell])
    elif kind is Kind.HorizontalTriple:
        rho = data.rho
        eps = data.signature[0] if data.signature else 1
        for i, j in pairs:
            add("rho_derivative", d(f"r{i}", rho[i], j) - h[i, j] * rho[j])
            for ell in range(n):
                if ell not in (i, j):
                    add("codazzi", d(f"h{i}{ell}", h[i, ell], j) - h[i, j] * h[j, ell])
            if i < j:
                gauss = d(f"h{i}{j}", h[i, j], i) + d(f"h{j}{i}", h[j, i], j) + c * v[i] * v[j]
                ricci = d(f"h{i}{j}", h[i, j], j) + d(f"h{j}{i}", h[j, i], i) + eps * rho[i] * rho[j]
                for ell in range(n):
                    if ell not in (i, j):
                        gauss = gauss + h[ell, i] * h[ell, j]
                        ricci = ricci + h[i, ell] * h[j, ell]
                add("gauss", gauss)
                add("ricci", ricci)
    return ResidualReport({k: max(vals) for k, vals in res.items()})


# ---------------------------------------------------------------------------
# immersions and moving frames


@dataclass(frozen=True)
class ImmersionField:
    """Immersion with orthonormal tangent and normal frames on a grid.

    Attributes
    ----------
    f : ndarray, shape (*grid, N)
        Position; on a sphere of curvature ``ambient_curvature`` when it is
        positive.
    X : ndarray, shape (n, *grid, N)
        Unit tangent vectors along the coordinate directions.  A tuple of
        ``n`` arrays of shape (*grid, N) is also accepted, which lets closed
        form seeds keep cheap broadcast views.
    xi : ndarray, shape (p, *grid, N), optional
        Normal frame.  For complex frames it may be omitted, in which case
        the normal frame is ``i X`` (plus ``sqrt(c) i f`` on the sphere).
    complex_structure : bool
        Vectors are complex (``C^N``).
    ambient_curvature : float
        0 for Euclidean space, ``c > 0`` for the sphere of radius
        ``1/sqrt(c)`` centred at the origin.
    active : ndarray of bool, optional
    """

    f: np.ndarray
    X: np.ndarray
    xi: np.ndarray | None = None
    complex_structure: bool = False
    ambient_curvature: float = 0.0
    active: np.ndarray | None = None

    @property
    def ambient_dim(self) -> int:
        """Real dimension of the ambient Euclidean space."""
        return self.f.shape[-1] * (2 if self.complex_structure else 1)

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def implicit_normals(self) -> bool:
        return self.xi is None

    @property
    def p(self) -> int:
        if self.xi is not None:
            return self.xi.shape[0]
        return self.n + (1 if self.ambient_curvature > 0 else 0)

    def normal(self, r: int) -> np.ndarray:
        if self.xi is not None:
            return self.xi[r]
        if r < self.n:
            return 1j * self.X[r]
        return np.sqrt(self.ambient_curvature) * 1j * self.f

    def interleaved(self, arr: np.ndarray) -> np.ndarray:
        """Real interleaved coordinates ``(x1, y1, x2, y2, ...)``."""
        if not self.complex_structure:
            return np.asarray(arr)
        a = np.asarray(arr)
        return np.stack([a.real, a.imag], axis=-1).reshape(a.shape[:-1] + (2 * a.shape[-1],))


def inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Real Euclidean inner product along the last axis (complex aware)."""
    if np.iscomplexobj(a) or np.iscomplexobj(b):
        return np.real(np.sum(np.conj(a) * b, axis=-1))
    return np.sum(a * b, axis=-1)


def frame_orthonormality(frame: ImmersionField) -> float:
    """Max deviation of the frame from orthonormality (and from ``f`` on the sphere)."""
    vecs = [frame.X[i] for i in range(frame.n)] + [frame.normal(r) for r in range(frame.p)]
    dev = 0.0
    for a in range(len(vecs)):
        for b in range(a, len(vecs)):
            g = inner(vecs[a], vecs[b])
            dev = max(dev, float(np.abs(g - (1.0 if a == b else 0.0)).max()))
    if frame.ambient_curvature > 0:
        for vec in vecs[: frame.n]:
            dev = max(dev, float(np.abs(inner(vec, frame.f)).max()))
        dev = max(dev, float(np.abs(inner(frame.f, frame.f) - 1.0 / frame.ambient_curvature).max()))
    return dev


def _frame_rhs(data: PrincipalData, complex_frame: bool, ambient_curvature: float, p: int):
    n = data.n
    kind = data.kind
    ct = ambient_curvature

    def rhs(i, y, cf):
        v, h = cf["v"], cf["h"]
        dy = np.zeros_like(y)
        X = y[1 : 1 + n]
        dy[0] = v[i] * X[i]
        acc = np.zeros_like(X[i])
        for j in range(n):
            if j != i:
                dy[1 + j] = h[j, i] * X[i]
                acc -= h[j, i] * X[j]
        if ct != 0:
            acc -= (ct * v[i]) * y[0]
        if complex_frame:
            acc += 1j * X[i]
        elif kind is Kind.CurvedTriple:
            xi = y[1 + n :]
            V = cf["V"]
            for r in range(p):
                acc += V[i, r] * xi[r]
                dy[1 + n + r] = -V[i, r] * X[i]
        else:  # flat pair normal frame
            xi = y[1 + n :]
            acc += xi[i]
            di = -X[i]
            for r in range(p):
                if r != i:
                    dy[1 + n + r] = h[i, r] * xi[i]
                    di = di - h[i, r] * xi[r]
            dy[1 + n + i] = di
        dy[1 + i] = acc
        return dy

    return rhs


def integrate_frame(
    data: PrincipalData,
    f0,
    X0,
    xi0=None,
    complex_structure: bool | None = None,
    ambient_curvature: float | None = None,
    order=None,
    check: bool = True,
) -> ImmersionField:
    """Propagate position and frame from the base node by RK4 sweeps.

    Frame equations (``i != j``)::

        d_i f   = v_i X_i
        d_i X_j = h_ji X_i
        d_i X_i = -sum_j h_ji X_j + (second fundamental form term) - ct v_i f

    The second fundamental form term is ``xi_i`` for flat pairs,
    ``sum_r V_ir xi_r`` for curved triples and ``i X_i`` for frames with a
    complex structure (Lagrangian or horizontal data), whose normal frame is
    not integrated.  Normal frames follow ``d_i xi_r = h_ir xi_i`` and
    ``d_i xi_i = -X_i - sum_r h_ir xi_r`` (flat pairs) or
    ``d_i xi_r = -V_ir X_i`` (curved triples).

    Orthonormality drift beyond ``TOL_FRAME`` raises ``IntegrationDrift``
    when ``check`` is set; the frame is never re-orthogonalized.
    """
    n = data.n
    grid = data.grid
    if complex_structure is None:
        complex_structure = data.kind in (Kind.LagrangianPair, Kind.HorizontalPair, Kind.HorizontalTriple)
    if ambient_curvature is None:
        ambient_curvature = data.c_tilde
    dtype = complex if complex_structure else float
    f0 = np.asarray(f0, dtype=dtype)
    X0 = np.asarray(X0, dtype=dtype).reshape(n, -1)
    blocks = [f0[None], X0]
    p = 0
    if not complex_structure:
        if xi0 is None:
            raise SchemaError("real frames need an initial normal frame")
        xi0 = np.asarray(xi0, dtype=float).reshape(-1, f0.shape[-1])
        p = xi0.shape[0]
        blocks.append(xi0)
        if data.kind is Kind.FlatPair and p < n:
            raise SchemaError("flat pair frames need at least n normals")
    y0 = np.concatenate(blocks, axis=0)
    fields = {"v": Field(data.v, 1), "h": Field(data.h, 2)}
    if data.kind is Kind.CurvedTriple:
        fields["V"] = Field(data.V, 2)
    rhs = _frame_rhs(data, complex_structure, ambient_curvature, p)
    y = rk4_sweep(grid, y0, rhs, fields, order=order, dtype=dtype)
    y = np.moveaxis(y, -2, 0)
    out = ImmersionField(
        f=y[0],
        X=y[1 : 1 + n],
        xi=y[1 + n :] if not complex_structure else None,
        complex_structure=complex_structure,
        ambient_curvature=ambient_curvature,
        active=data.active,
    )
    if check:
        dev = frame_orthonormality(out)
        if dev > TOL_FRAME:
            raise IntegrationDrift(f"frame orthonormality drift {dev:.3e} exceeds {TOL_FRAME:g}")
    return out


def position_derivative_residual(frame: ImmersionField, data: PrincipalData, border: int = 2) -> float:
    """Max over interior nodes of ``|d_i f - v_i X_i|`` (finite differences)."""
    grid = data.grid
    m = interior_mask(grid, border)
    if data.active is not None:
        m &= data.active
    worst = 0.0
    f = np.moveaxis(frame.f, -1, 0)
    for i in range(data.n):
        df = np.moveaxis(diff(f, grid, i, lead=1), 0, -1)
        r = np.abs(df - data.v[i][..., None] * frame.X[i]).max(axis=-1)
        worst = max(worst, _masked_max(r, m))
    return worst


# ---------------------------------------------------------------------------
# curvature and sphere containment


def numeric_sectional_curvature(
    data: PrincipalData, v_min: float = 0.2, border: int = 6, order: int = 6
) -> tuple[np.ndarray, np.ndarray]:
    """Sectional curvature of every coordinate plane of ``sum_i v_i^2 du_i^2``.

    Christoffel symbols of the diagonal metric are formed from fourth-order
    finite differences of ``g_ii = v_i^2``; the Riemann tensor follows from
    finite differences of the Christoffel symbols.  Near zeros of ``v`` the
    metric degenerates and the truncation error grows like a negative power
    of ``|v|``, so nodes whose stencil meets ``|v_i| < v_min`` are skipped.

    Returns
    -------
    K : ndarray, shape (n, n, *grid)
        ``K[i, j]`` is the curvature of the ``(d_i, d_j)`` plane; NaN where
        skipped.
    valid : ndarray of bool, shape grid
        Interior nodes whose stencil stays where ``|v_i| >= v_min`` for all i.
    """
    grid, n = data.grid, data.n
    v = np.asarray(data.v, dtype=float)
    g = v**2
    ginv = 1.0 / np.where(g == 0, np.nan, g)
    dg = np.stack([np.stack([diff(g[k], grid, a, order=order) for a in range(n)]) for k in range(n)])  # dg[k, a] = d_a g_kk
    # Gamma[k, i, j] for diagonal metric
    gam = np.zeros((n, n, n) + grid.shape)
    for k in range(n):
        for i in range(n):
            for j in range(n):
                val = 0.0
                if j == k:
                    val = val + dg[k, i]
                if i == k:
                    val = val + dg[k, j]
                if i == j:
                    val = val - dg[i, k]
                if not np.isscalar(val):
                    gam[k, i, j] = 0.5 * ginv[k] * val
    dgam = {}

    def dG(a, b, c, axis):
        key = (a, b, c, axis)
        if key not in dgam:
            dgam[key] = diff(gam[a, b, c], grid, axis, order=order)
        return dgam[key]

    K = np.full((n, n) + grid.shape, np.nan)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            # R^i_{jij} = d_i Gamma^i_{jj} - d_j Gamma^i_{ij} + Gamma^i_{ie} Gamma^e_{jj} - Gamma^i_{je} Gamma^e_{ij}
            r = dG(i, j, j, i) - dG(i, i, j, j)
            for e in range(n):
                r = r + gam[i, i, e] * gam[e, j, j] - gam[i, j, e] * gam[e, i, j]
            K[i, j] = r * ginv[j]
    ok = np.all(np.abs(v) >= v_min, axis=0)
    # a node is valid when its whole stencil (two differentiations) is ok
    radius = 6 if order == 6 else 4
    valid = ok.copy()
    for a in range(n):
        for s in range(1, radius + 1):
            valid &= np.roll(ok, s, axis=a) & np.roll(ok, -s, axis=a)
    valid &= interior_mask(grid, max(border, radius))
    if data.active is not None:
        valid &= data.active
    K[:, :, ~valid] = np.nan
    return K, valid


def check_sphere_containment(obj, mask: np.ndarray | None = None) -> float:
    """``max |sum_i v_i^2 - 1|`` for data or ``max | |f|^2 - 1 |`` for a field."""
    if isinstance(obj, PrincipalData):
        dev = np.abs(np.sum(np.asarray(obj.v) ** 2, axis=0) - 1.0)
        act = obj.active
    elif isinstance(obj, ImmersionField):
        dev = np.abs(inner(obj.f, obj.f) - 1.0)
        act = obj.active
    else:
        raise SchemaError("expected PrincipalData or ImmersionField")
    m = np.ones(dev.shape, dtype=bool)
    if act is not None:
        m &= act
    if mask is not None:
        m &= mask
    return _masked_max(dev, m)
