import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from vribaucour.errors import IntegrationDiverged
from vribaucour.geomgrid import Grid
from vribaucour.sweep import Field, rk4_sweep


def constant_system(mats):
    def rhs(axis, y, cf):
        return np.einsum("ab,b...->a...", mats[axis], y)

    return rhs


@given(st.integers(0, 2**31 - 1))
def test_commuting_constant_system_matches_expm(seed):
    # d_a y = M_a y with commuting M_a: y(u) = exp(sum u_a M_a) y0
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((3, 3))
    d1, d2 = np.diag(rng.uniform(-1, 1, 3)), np.diag(rng.uniform(-1, 1, 3))
    qi = np.linalg.inv(q)
    mats = [q @ d1 @ qi, q @ d2 @ qi]
    g = Grid.cube(2, 0.5, 0.05)
    y0 = rng.standard_normal(3)
    y = rk4_sweep(g, y0, constant_system(mats), {})
    idx = (0, g.shape[1] - 1)
    u = g.point(idx)
    exact = expm(u[0] * mats[0] + u[1] * mats[1]) @ y0
    assert np.abs(y[idx] - exact).max() < 1e-7 * (1 + np.abs(exact).max())


def test_rk4_is_fourth_order_with_variable_coefficients():
    # d_1 y = a(u_1) y with a = cos u_1: y = exp(sin u_1)
    errs = []
    for h in (0.1, 0.05):
        g = Grid((-1.0,), (1.0,), (int(round(2 / h)) + 1,))
        a = np.cos(g.axis(0))

        def rhs(axis, y, cf):
            return cf["a"] * y

        y = rk4_sweep(g, np.array(1.0), rhs, {"a": Field(a)})
        errs.append(np.abs(y - np.exp(np.sin(g.axis(0)))).max())
    assert errs[0] / errs[1] > 12


def test_base_value_and_order_argument():
    g = Grid.cube(2, 0.5, 0.1)
    mats = [np.array([[0.0, 1.0], [-1.0, 0.0]]), np.array([[0.5, 0.0], [0.0, 0.5]])]
    y0 = np.array([1.0, 2.0])
    a = rk4_sweep(g, y0, constant_system(mats), {}, order=(0, 1))
    b = rk4_sweep(g, y0, constant_system(mats), {}, order=(1, 0))
    assert np.array_equal(a[g.center_index], y0)
    assert np.abs(a - b).max() < 1e-6


def test_substeps_reduce_error():
    g = Grid((-1.0,), (1.0,), (11,))
    rhs = constant_system([np.array([[0.0, 1.0], [-4.0, 0.0]])])
    y1 = rk4_sweep(g, np.array([1.0, 0.0]), rhs, {})
    y2 = rk4_sweep(g, np.array([1.0, 0.0]), rhs, {}, substeps=2)
    exact = np.cos(2 * g.axis(0))
    assert np.abs(y2[:, 0] - exact).max() < np.abs(y1[:, 0] - exact).max() / 8


def test_divergence_raises():
    g = Grid((0.0,), (1.0,), (11,))
    with pytest.raises(IntegrationDiverged):
        rk4_sweep(g, np.array([1.0]), constant_system([np.array([[400.0]])]), {})
