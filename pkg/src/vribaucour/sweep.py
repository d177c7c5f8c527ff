"""Axis-by-axis RK4 integration of linear total differential systems on grids.

A system ``d_a Y = F_a(Y, coefficients)`` (one equation per coordinate axis)
is integrated from a base node: first along axis ``order[0]`` through the
base, then along ``order[1]`` from every node already known, and so on.  Each
grid interval is covered by ``substeps`` RK4 steps.  Coefficients live on
grid nodes only; their values between nodes come from four-point cubic
interpolation, which keeps the overall scheme fourth order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import IntegrationDiverged

DIVERGENCE_LIMIT = 1e12
CHUNK_VALUES = 1 << 15  # state values per batch chunk, small enough to stay in cache


@dataclass(frozen=True)
class Field:
    """A grid field with ``lead`` component axes before the grid axes.

    Any axes after the grid axes are trailing component axes.  The array may
    be a zero-stride broadcast view (it must still have the full grid shape);
    only the slices a step needs are copied.
    """

    array: np.ndarray
    lead: int = 0


def _line_view(arr: np.ndarray, lead: int, n: int, base: tuple[int, ...], axis: int, done: tuple[int, ...]):
    """View of ``arr`` restricted to the slab swept at this stage.

    Returned shape: ``(N_axis, *lead_shape, B, *trail_shape)`` is reached by a
    reshape of the result; here we only index and move axes.
    """
    idx = [slice(None)] * lead
    for g in range(n):
        if g == axis or g in done:
            idx.append(slice(None))
        else:
            idx.append(base[g])
    trail = arr.ndim - lead - n
    idx += [slice(None)] * trail
    view = arr[tuple(idx)]
    # axis position inside the view: lead + number of kept grid axes before it
    kept = sorted(set(done) | {axis})
    pos = lead + kept.index(axis)
    return np.moveaxis(view, pos, 0), kept


def _take(view: np.ndarray, lead: int, nkept: int, sl) -> np.ndarray:
    """Rows ``sl`` of a line view, shaped ``(rows, *lead, *trail, B)``."""
    rows = view[sl]
    shp = rows.shape
    lead_shape = shp[1 : 1 + lead]
    grid_shape = shp[1 + lead : 1 + lead + nkept - 1]
    trail_shape = shp[1 + lead + nkept - 1 :]
    b = int(np.prod(grid_shape)) if grid_shape else 1
    rows = rows.reshape((shp[0],) + lead_shape + (b,) + trail_shape)
    return np.moveaxis(rows, 1 + lead, -1)


def _lagrange_weights(x: float, npts: int = 4) -> np.ndarray:
    """Weights of the interpolating polynomial through nodes ``0..npts-1`` at ``x``."""
    w = np.ones(npts)
    for j in range(npts):
        for m in range(npts):
            if m != j:
                w[j] *= (x - m) / (j - m)
    return w


class _Coefficients:
    """Per-stage accessor of coefficient values on nodes and between them.

    Values are shaped ``(*lead, *trail, B)``.  Fields that are constant over
    the grid (zero strides on every grid axis) are handed out as
    ``(*lead, *trail, 1)`` arrays without interpolation.
    """

    def __init__(self, fields: Mapping[str, Field], n: int, base, axis: int, done: tuple[int, ...], length: int):
        self.items = {}
        self.constants = {}
        self.length = length
        for name, fld in fields.items():
            arr = fld.array
            grid_strides = arr.strides[fld.lead : fld.lead + n]
            if all(st == 0 for st in grid_strides):
                idx = (slice(None),) * fld.lead + (0,) * n
                self.constants[name] = np.ascontiguousarray(arr[idx])[..., None]
                continue
            view, kept = _line_view(arr, fld.lead, n, base, axis, done)
            self.items[name] = (view, fld.lead, len(kept))

    def _rows(self, name, lo, hi):
        view, lead, nk = self.items[name]
        return _take(view, lead, nk, slice(lo, hi))

    def node(self, m: int) -> dict:
        out = dict(self.constants)
        out.update({name: self._rows(name, m, m + 1)[0] for name in self.items})
        return out

    def at(self, m: int, j: int, den: int) -> dict:
        """Values at ``m + j / den`` for ``0 <= j <= den`` (cubic interpolation)."""
        if j == 0:
            return self.node(m)
        if j == den:
            return self.node(m + 1)
        t = j / den
        n = self.length
        out = dict(self.constants)
        if n < 4:
            out.update({name: (1 - t) * r[0] + t * r[1] for name in self.items for r in [self._rows(name, m, m + 2)]})
            return out
        lo = min(max(m - 1, 0), n - 4)
        w = _lagrange_weights(m + t - lo)
        out.update({name: np.tensordot(w, self._rows(name, lo, lo + 4), axes=(0, 0)) for name in self.items})
        return out


Rhs = Callable[[int, np.ndarray, dict], np.ndarray]


def _axpy(y: np.ndarray, a: float, x: np.ndarray) -> np.ndarray:
    """``y + a x`` with a single temporary."""
    out = np.multiply(x, a)
    out += y
    return out


def _batch(value: np.ndarray, sl: slice) -> np.ndarray:
    """Columns ``sl`` of a coefficient; grid-constant ones (last axis 1) pass through."""
    return value if value.shape[-1] == 1 else value[..., sl]


def _rk4(rhs: Rhs, axis: int, y: np.ndarray, hs: float, c0: dict, cm: dict, c1: dict) -> np.ndarray:
    """One classical RK4 step with the stage sum accumulated in place."""
    k = rhs(axis, y, c0)
    total = k.copy()
    k = rhs(axis, _axpy(y, 0.5 * hs, k), cm)
    total += 2.0 * k
    k = rhs(axis, _axpy(y, 0.5 * hs, k), cm)
    total += 2.0 * k
    k = rhs(axis, _axpy(y, hs, k), c1)
    total += k
    return _axpy(y, hs / 6.0, total)


def rk4_sweep(
    grid,
    y0: np.ndarray,
    rhs: Rhs,
    fields: Mapping[str, Field],
    order: tuple[int, ...] | None = None,
    base: tuple[int, ...] | None = None,
    dtype=float,
    substeps: int = 1,
) -> np.ndarray:
    """Integrate ``d_a Y = rhs(a, Y, coeffs)`` over the whole grid.

    Parameters
    ----------
    grid : Grid
    y0 : ndarray
        State at the base node, any shape ``S``.
    rhs : callable
        ``rhs(axis, y, coeffs)`` with ``y`` of shape ``(*S, B)`` (the batch of
        lines last, so component slices are contiguous) and ``coeffs[name]``
        of shape ``(*lead, *trail, B)`` or ``(*lead, *trail, 1)`` for fields
        constant over the grid; returns ``dy`` shaped like ``y``.
    fields : mapping of Field
        Coefficient fields sampled on the grid.
    order : tuple of int, optional
        Axis order of the sweeps; defaults to ``0, 1, ..., n-1``.
    base : tuple of int, optional
        Base node index; defaults to the grid center.
    substeps : int
        RK4 steps per grid interval.

    Returns
    -------
    ndarray of shape ``grid.shape + S``.
    """
    n = grid.n
    order = tuple(range(n)) if order is None else tuple(order)
    base = grid.center_index if base is None else tuple(base)
    y0 = np.asarray(y0, dtype=dtype)
    state_shape = y0.shape
    out = np.empty(grid.shape + state_shape, dtype=dtype)
    out[base] = y0

    done: tuple[int, ...] = ()
    for axis in order:
        h = grid.spacing[axis]
        length = grid.shape[axis]
        view, kept = _line_view(out, 0, n, base, axis, done)
        nk = len(kept)
        coeffs = _Coefficients(fields, n, base, axis, done, length)
        b = int(np.prod(view.shape[1:nk])) if nk > 1 else 1
        b0 = base[axis]
        row_shape = view.shape[1:]
        chunk = max(1, CHUNK_VALUES // max(1, int(np.prod(state_shape))))

        def step(y, m_from, m_to):
            lo = min(m_from, m_to)
            sgn = 1.0 if m_to > m_from else -1.0
            hs = sgn * h / substeps
            den = 2 * substeps
            for q in range(substeps):
                js = (2 * q, 2 * q + 1, 2 * q + 2)
                if sgn < 0:
                    js = tuple(den - j for j in js)
                stages = [coeffs.at(lo, j, den) for j in js]
                out = np.empty_like(y)
                # lines are independent: cache-sized chunks of the batch
                for a in range(0, y.shape[-1], chunk):
                    sl = slice(a, a + chunk)
                    c0, cm, c1 = ({name: _batch(v, sl) for name, v in st.items()} for st in stages)
                    out[..., sl] = _rk4(rhs, axis, y[..., sl], hs, c0, cm, c1)
                y = out
            return y

        def check(y):
            # max/min propagate NaN, so one comparison catches both failure modes
            if np.iscomplexobj(y):
                hi = max(np.abs(y.real).max(), np.abs(y.imag).max())
                lo = -hi
            else:
                hi, lo = y.max(), y.min()
            if not (hi <= DIVERGENCE_LIMIT and lo >= -DIVERGENCE_LIMIT):
                raise IntegrationDiverged(f"sweep along axis {axis} produced non-finite or huge values")

        def store(m, y):
            view[m] = np.moveaxis(y, -1, 0).reshape(row_shape)

        start = np.ascontiguousarray(np.moveaxis(view[b0].reshape((b,) + state_shape), 0, -1))
        y = start
        for m in range(b0, length - 1):
            y = step(y, m, m + 1)
            check(y)
            store(m + 1, y)
        y = start
        for m in range(b0, 0, -1):
            y = step(y, m, m - 1)
            check(y)
            store(m - 1, y)
        done = done + (axis,)
    return out
