import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ibflow.errors import CouplingError
from ibflow.grid import BoxDomain, build_grid
from ibflow.kernel import (build_coupling, delta_1d, interpolate, kernel_3d,
                           spread)
from ibflow.surface import LagrangianCloud


def make_cloud(points, areas=None):
    points = np.atleast_2d(points)
    m = len(points)
    return LagrangianCloud(
        points=points,
        areas=np.ones(m) if areas is None else np.asarray(areas, dtype=float),
        normals=np.tile([1.0, 0.0, 0.0], (m, 1)),
        velocity=np.zeros((m, 3)),
    )


def big_grid(h=1.0, n=10):
    return build_grid(BoxDomain(np.zeros(3), np.full(3, n * h)), h)


def test_delta_center_value():
    assert delta_1d(0.0) == 0.5


def test_delta_branch_continuity_at_one():
    assert np.isclose(delta_1d(1.0), 0.25, atol=1e-15)
    assert np.isclose(delta_1d(np.nextafter(1.0, 2.0)), 0.25, atol=1e-12)


def test_delta_outside_support():
    assert delta_1d(2.5) == 0.0
    assert delta_1d(-2.0) == 0.0
    assert delta_1d(np.nextafter(2.0, 3.0)) == 0.0


def test_delta_even():
    r = np.linspace(0, 3, 301)
    assert np.array_equal(delta_1d(r), delta_1d(-r))


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-5, max_value=5, allow_nan=False))
def test_delta_lattice_identities(r):
    k = np.arange(-8, 9)
    vals = delta_1d(r - k)
    assert abs(vals.sum() - 1.0) <= 1e-12
    assert abs(((r - k) * vals).sum()) <= 1e-12
    assert abs((vals ** 2).sum() - 0.375) <= 1e-12


def test_lattice_identities_bulk():
    rng = np.random.default_rng(7)
    r = rng.uniform(-10, 10, 1000)
    k = np.arange(-14, 15)
    vals = delta_1d(r[:, None] - k[None, :])
    assert np.abs(vals.sum(axis=1) - 1.0).max() <= 1e-12
    assert np.abs(((r[:, None] - k[None, :]) * vals).sum(axis=1)).max() <= 1e-12
    assert np.abs((vals ** 2).sum(axis=1) - 0.375).max() <= 1e-12


def test_kernel_3d_coincident():
    assert np.isclose(kernel_3d(np.zeros(3), np.zeros(3), 1.0), 0.125)


def test_kernel_3d_support_edge():
    assert kernel_3d(np.array([2.0, 0.0, 0.0]), np.zeros(3), 1.0) == 0.0


def test_kernel_3d_matches_scalar_product():
    # independent evaluation: explicit per-axis products at random offsets
    rng = np.random.default_rng(11)
    h = 0.37
    x = rng.uniform(-1, 1, (200, 3))
    X = rng.uniform(-1, 1, (200, 3))
    got = kernel_3d(x, X, h)
    want = np.array([
        delta_1d((a[0] - b[0]) / h) * delta_1d((a[1] - b[1]) / h)
        * delta_1d((a[2] - b[2]) / h) / h ** 3
        for a, b in zip(x, X)
    ])
    assert np.abs(got - want).max() <= 1e-15 * max(1.0, np.abs(want).max())


def test_coupling_point_on_node():
    g = big_grid()
    c = build_coupling(g, make_cloud([[5.0, 5.0, 5.0]]))
    assert c.D.getrow(0).nnz == 27
    assert abs(c.row_sums()[0] - 1.0) <= 1e-12


def test_coupling_point_outside_box_errors():
    g = big_grid()
    with pytest.raises(CouplingError):
        build_coupling(g, make_cloud([[20.0, 5.0, 5.0]]))


def test_coupling_support_touching_inactive_node_errors():
    from ibflow.grid import EulerianGrid

    g = big_grid()
    mask = g.active_mask.copy()
    mask[g.ijk_to_global(5, 5, 5)] = False
    holed = EulerianGrid(g.box, g.h, g.dims, mask)
    with pytest.raises(CouplingError, match="0"):
        build_coupling(holed, make_cloud([[5.5, 5.5, 5.5]]))


def test_coupling_row_sums_random_placements():
    rng = np.random.default_rng(0)
    g = big_grid()
    pts = rng.uniform(2.5, 7.5, (1000, 3))
    c = build_coupling(g, make_cloud(pts))
    assert (np.diff(c.D.indptr) <= 64).all()
    assert np.abs(c.row_sums() - 1.0).max() <= 1e-12


def test_interpolate_constant_field():
    rng = np.random.default_rng(1)
    g = big_grid()
    c = build_coupling(g, make_cloud(rng.uniform(3, 7, (40, 3))))
    u = np.tile([0.3, -1.2, 2.0], (g.N, 1))
    U = interpolate(c, u)
    assert np.abs(U - [0.3, -1.2, 2.0]).max() <= 1e-12


def test_interpolate_linear_field():
    rng = np.random.default_rng(2)
    g = big_grid()
    pts = rng.uniform(3, 7, (60, 3))
    c = build_coupling(g, make_cloud(pts))
    U = interpolate(c, g.coords())
    assert np.abs(U - pts).max() <= 1e-10


def test_interpolate_zero_field():
    g = big_grid()
    c = build_coupling(g, make_cloud([[4.2, 5.1, 5.9]]))
    assert np.abs(interpolate(c, np.zeros((g.N, 3)))).max() == 0.0


def test_spread_single_point_row():
    g = big_grid()
    c = build_coupling(g, make_cloud([[5.3, 5.2, 4.9]]))
    f = spread(c, np.array([[1.0, 0.0, 0.0]]), np.ones(1))
    assert np.allclose(f[:, 0], c.D.toarray()[0])
    assert np.abs(f[:, 1:]).max() == 0.0


def test_spread_total_force_conservation():
    rng = np.random.default_rng(5)
    g = big_grid()
    pts = rng.uniform(3, 7, (80, 3))
    dS = rng.uniform(0.5, 2.0, 80)
    c = build_coupling(g, make_cloud(pts, dS))
    F = rng.standard_normal((80, 3))
    f = spread(c, F, dS)
    lhs = f.sum(axis=0) * g.h ** 3
    rhs = (F * dS[:, None]).sum(axis=0)
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(rhs).max())


def test_spread_zero_force():
    g = big_grid()
    c = build_coupling(g, make_cloud([[5.0, 5.0, 5.0]]))
    assert np.abs(spread(c, np.zeros((1, 3)), np.ones(1))).max() == 0.0


def test_interpolate_spread_adjoint():
    rng = np.random.default_rng(6)
    g = big_grid()
    pts = rng.uniform(3, 7, (50, 3))
    dS = rng.uniform(0.5, 2.0, 50)
    c = build_coupling(g, make_cloud(pts, dS))
    F = rng.standard_normal((50, 3))
    u = rng.standard_normal((g.N, 3))
    lhs = (spread(c, F, dS) * u).sum() * g.h ** 3
    rhs = (F * interpolate(c, u) * dS[:, None]).sum()
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))
