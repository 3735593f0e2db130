import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ibflow.errors import ConfigurationError
from ibflow.grid import (BoxDomain, build_grid, crop_active_region, divergence,
                         gradient, laplacian)
from ibflow.shapes import make_box_surface, make_icosphere
from ibflow.surface import closest_point_on_triangles, point_in_solid


def unit_box():
    return BoxDomain(np.zeros(3), np.ones(3))


def test_box_validation():
    with pytest.raises(ConfigurationError):
        BoxDomain(np.zeros(3), np.array([1.0, -1.0, 1.0]))


def test_build_grid_counts():
    g = build_grid(unit_box(), 0.5)
    assert g.N == 27
    assert tuple(g.dims) == (3, 3, 3)


def test_build_grid_verification_box():
    # 50 x 12 x 12 cells -> 51*13*13 lattice nodes
    box = BoxDomain(np.array([0.0, -0.006, -0.006]), np.array([0.05, 0.006, 0.006]))
    g = build_grid(box, 1e-3)
    assert g.N == 8619


def test_build_grid_non_divisible_extent():
    with pytest.raises(ConfigurationError):
        build_grid(unit_box(), 0.3)


def test_build_grid_negative_h():
    with pytest.raises(ConfigurationError):
        build_grid(unit_box(), -0.1)


def test_node_coordinates():
    g = build_grid(unit_box(), 0.5)
    c = g.coords()
    assert np.isclose(c.min(), 0.0) and np.isclose(c.max(), 1.0)
    assert any(np.allclose(p, [0.5, 0.5, 0.5]) for p in c)


def test_index_round_trip():
    g = build_grid(unit_box(), 0.25)
    a = np.arange(g.N)
    assert np.array_equal(g.global_to_active[g.active_to_global[a]], a)


def test_divergence_constant_field():
    g = build_grid(unit_box(), 0.25)
    u = np.tile([1.0, -2.0, 0.5], (g.N, 1))
    assert np.abs(divergence(g, u)).max() == 0.0


def test_gradient_linear_exact():
    g = build_grid(unit_box(), 0.25)
    p = g.coords()[:, 0]
    gr = gradient(g, p)
    assert np.allclose(gr[:, 0], 1.0, atol=1e-13)
    assert np.abs(gr[:, 1:]).max() < 1e-13


def test_divergence_quadratic_exact():
    # central difference is exact on quadratics at interior nodes
    g = build_grid(unit_box(), 0.1)
    x = g.coords()
    u = np.zeros((g.N, 3))
    u[:, 0] = x[:, 0] ** 2
    interior = ~g.ops.boundary_mask
    err = np.abs(divergence(g, u) - 2 * x[:, 0])[interior]
    assert err.max() <= 1e-12


def test_stencil_consistency_composition():
    g = build_grid(unit_box(), 0.25)
    rng = np.random.default_rng(3)
    p = rng.standard_normal(g.N)
    assert np.abs(divergence(g, gradient(g, p)) - laplacian(g, p)).max() == 0.0


@pytest.mark.parametrize("op", ["gradient", "laplacian_compact"])
def test_stencil_order_of_accuracy(op):
    errs = []
    for h in (0.1, 0.05):
        g = build_grid(unit_box(), h)
        x = g.coords()
        f = np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]) * np.sin(np.pi * x[:, 2])
        if op == "gradient":
            ex = np.pi * np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]) * np.sin(np.pi * x[:, 2])
            num = gradient(g, f)[:, 0]
        else:
            ex = -3 * np.pi ** 2 * f
            num = g.ops.lap_compact @ f
        errs.append(np.abs(num - ex).max())
    order = np.log2(errs[0] / errs[1])
    assert order >= 1.9


def test_crop_requires_minimum_band():
    g = build_grid(unit_box(), 0.05)
    sphere = make_icosphere(0.25, center=(0.5, 0.5, 0.5), subdivisions=2)
    with pytest.raises(ConfigurationError):
        crop_active_region(g, sphere, band=0.05)  # band < 2h


def test_crop_solid_filling_box_is_identity():
    g = build_grid(unit_box(), 0.125)
    solid = make_box_surface([-0.1, -0.1, -0.1], [1.1, 1.1, 1.1])
    g2 = crop_active_region(g, solid, band=0.25)
    assert g2.N == g.N


def test_crop_increases_inside_fraction():
    box = BoxDomain(np.array([0.0, -0.006, -0.006]), np.array([0.05, 0.006, 0.006]))
    g = build_grid(box, 1e-3)
    from ibflow.shapes import make_cylinder_tube

    tube = make_cylinder_tube(0.005, 0.0, 0.05, target_edge=1e-3)
    inside_before = point_in_solid(tube, g.coords()).mean()
    g2 = crop_active_region(g, tube, band=3e-3)
    assert g2.N < g.N
    assert g2.inside_fraction > inside_before


def test_crop_against_brute_force_sphere():
    # exhaustive exact-distance + parity oracle over every lattice node
    h = 0.05
    band = 2 * h
    g = build_grid(unit_box(), h)
    sphere = make_icosphere(0.25, center=(0.5, 0.5, 0.5), subdivisions=3)
    g2 = crop_active_region(g, sphere, band=band)

    pts = g.coords()
    inside = point_in_solid(sphere, pts)
    V, F = sphere.vertices, sphere.facets
    dmin = np.full(len(pts), np.inf)
    for s in range(0, sphere.n_facets, 64):
        fi = np.arange(s, min(s + 64, sphere.n_facets))
        pe = np.repeat(pts, len(fi), axis=0)
        fa = np.tile(fi, len(pts))
        q = closest_point_on_triangles(pe, V[F[fa, 0]], V[F[fa, 1]], V[F[fa, 2]])
        d = np.linalg.norm(pe - q, axis=1).reshape(len(pts), len(fi)).min(axis=1)
        dmin = np.minimum(dmin, d)
    expected = int((inside | (dmin <= band)).sum())
    assert g2.N == expected


def test_crop_monotone_in_band():
    g = build_grid(unit_box(), 0.05)
    sphere = make_icosphere(0.2, center=(0.5, 0.5, 0.5), subdivisions=2)
    small = crop_active_region(g, sphere, band=0.1)
    large = crop_active_region(g, sphere, band=0.15)
    assert set(small.active_to_global) <= set(large.active_to_global)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=2, max_value=6))
def test_index_round_trip_property(n):
    g = build_grid(unit_box(), 1.0 / n)
    a = np.arange(g.N)
    assert np.array_equal(g.global_to_active[g.active_to_global[a]], a)


def test_fields_live_on_active_nodes_only():
    g = build_grid(unit_box(), 0.1)
    sphere = make_icosphere(0.3, center=(0.5, 0.5, 0.5), subdivisions=2)
    g2 = crop_active_region(g, sphere, band=0.2)
    assert g2.zeros_scalar().shape == (g2.N,)
    assert g2.zeros_vector().shape == (g2.N, 3)
    assert g2.N < g.N
