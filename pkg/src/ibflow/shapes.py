"""Analytic surface generators for the preset cases and tests.

All generators return closed, watertight :class:`TriangleSurface` objects.
Tube generators mark their lateral-wall facets in ``facet_groups['wall']`` so
the resampler can exclude end caps (caps coincide with box faces where the
inlet/outlet conditions are applied and carry no Lagrangian points).
"""

from __future__ import annotations

import numpy as np

from .surface import TriangleSurface, surface_from_arrays


def make_box_surface(lo, hi) -> TriangleSurface:
    """Axis-aligned box as 12 triangles (mostly a test fixture)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ])
    f = np.array([
        [0, 2, 1], [0, 3, 2],          # z = z0
        [4, 5, 6], [4, 6, 7],          # z = z1
        [0, 1, 5], [0, 5, 4],          # y = y0
        [3, 7, 6], [3, 6, 2],          # y = y1
        [0, 4, 7], [0, 7, 3],          # x = x0
        [1, 2, 6], [1, 6, 5],          # x = x1
    ])
    return surface_from_arrays(v, f)


def make_icosphere(radius: float = 1.0, center=(0.0, 0.0, 0.0),
                   subdivisions: int = 3) -> TriangleSurface:
    """Icosahedron subdivided ``subdivisions`` times, vertices on the sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    v /= np.linalg.norm(v, axis=1)[:, None]
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    for _ in range(subdivisions):
        v, f = _subdivide(v, f)
    v = v * radius + np.asarray(center, dtype=float)
    return surface_from_arrays(v, f)


def _subdivide(v, f):
    edge_mid = {}
    verts = list(v)

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in edge_mid:
            m = verts[i] + verts[j]
            m /= np.linalg.norm(m)
            edge_mid[key] = len(verts)
            verts.append(m)
        return edge_mid[key]

    out = []
    for i, j, k in f:
        a = midpoint(i, j)
        b = midpoint(j, k)
        c = midpoint(k, i)
        out.extend([[i, a, c], [j, b, a], [k, c, b], [a, b, c]])
    return np.asarray(verts), np.asarray(out, dtype=np.int64)


def make_cylinder_tube(radius: float, x_start: float, x_end: float,
                       target_edge: float, axis: int = 0,
                       center=(0.0, 0.0), wall_margin: float = 0.0) -> TriangleSurface:
    """Closed circular tube along a coordinate axis, capped at both ends.

    ``wall_margin`` shrinks the ``'wall'`` facet group away from the caps so
    resampled points keep full kernel support when the caps sit on domain
    faces. The caps themselves stay at ``x_start``/``x_end``.
    """
    length = x_end - x_start
    if length <= 0 or radius <= 0:
        raise ValueError("cylinder needs positive length and radius")
    n_circ = max(8, int(round(2 * np.pi * radius / target_edge)))
    stations = _axial_stations(x_start, x_end, wall_margin, target_edge)
    theta = 2 * np.pi * np.arange(n_circ) / n_circ

    ring_y = radius * np.cos(theta)
    ring_z = radius * np.sin(theta)
    verts = []
    for s in stations:
        band = np.column_stack([np.full(n_circ, s), ring_y + center[0], ring_z + center[1]])
        verts.append(band)
    verts = np.concatenate(verts)
    cap0 = len(verts)
    verts = np.vstack([verts, [[x_start, center[0], center[1]], [x_end, center[0], center[1]]]])

    facets, wall = _tube_facets(len(stations), n_circ, cap0, cap0 + 1)
    if axis != 0:
        order = {1: [1, 0, 2], 2: [2, 1, 0]}[axis]
        verts = verts[:, order]
    surf = surface_from_arrays(verts, facets)
    surf.facet_groups["wall"] = _wall_in_span(surf, np.asarray(wall), axis,
                                              x_start + wall_margin, x_end - wall_margin)
    return surf


def make_bend_tube(tube_radius: float, bend_radius: float, inlet_point,
                   leg_in: float, leg_out: float, target_edge: float,
                   wall_margin: float = 0.0) -> TriangleSurface:
    """90-degree bend tube in the z=0 plane: straight inlet leg along +y,
    quarter-circle arc of radius ``bend_radius`` turning into +x, straight
    outlet leg along +x. Capped at both ends.

    ``inlet_point`` is the centre of the inlet cap; the outlet cap lands at
    ``(x0 + bend_radius + leg_out, y0 + leg_in + bend_radius, z0)``.
    """
    x0, y0, z0 = np.asarray(inlet_point, dtype=float)
    arc_len = 0.5 * np.pi * bend_radius
    total = leg_in + arc_len + leg_out
    n_axial = max(4, int(round(total / target_edge)))
    s_vals = _axial_stations(0.0, total, wall_margin, target_edge)

    def frame(s):
        # centreline position and unit tangent at arclength s
        if s <= leg_in:
            return np.array([x0, y0 + s, z0]), np.array([0.0, 1.0, 0.0])
        if s <= leg_in + arc_len:
            ang = np.pi - (s - leg_in) / bend_radius  # from 180 deg to 90 deg
            cx, cy = x0 + bend_radius, y0 + leg_in
            pos = np.array([cx + bend_radius * np.cos(ang), cy + bend_radius * np.sin(ang), z0])
            tan = np.array([np.sin(ang), -np.cos(ang), 0.0])
            return pos, tan
        t = s - leg_in - arc_len
        return np.array([x0 + bend_radius + t, y0 + leg_in + bend_radius, z0]), np.array([1.0, 0.0, 0.0])

    n_circ = max(8, int(round(2 * np.pi * tube_radius / target_edge)))
    theta = 2 * np.pi * np.arange(n_circ) / n_circ
    verts = []
    zhat = np.array([0.0, 0.0, 1.0])
    for s in s_vals:
        pos, tan = frame(s)
        e1 = np.cross(zhat, tan)
        e1 /= np.linalg.norm(e1)
        ring = pos + tube_radius * (np.outer(np.cos(theta), e1) + np.outer(np.sin(theta), zhat))
        verts.append(ring)
    verts = np.concatenate(verts)
    cap0 = len(verts)
    p_in, _ = frame(0.0)
    p_out, _ = frame(total)
    verts = np.vstack([verts, p_in, p_out])

    facets, wall = _tube_facets(len(s_vals), n_circ, cap0, cap0 + 1)
    surf = surface_from_arrays(verts, facets)
    # wall group by arclength span: rings are uniformly indexed along s_vals
    wall = np.asarray(wall)
    ring_of_facet = np.minimum(wall // (2 * n_circ), len(s_vals) - 2)
    s_lo = s_vals[ring_of_facet]
    keep = (s_lo >= wall_margin - 1e-12) & (s_vals[ring_of_facet + 1] <= total - wall_margin + 1e-12)
    surf.facet_groups["wall"] = wall[keep]
    return surf


def _axial_stations(s0, s1, margin, target_edge):
    """Station positions including the exact margin breakpoints."""
    pts = {s0, s1}
    if margin > 0:
        pts.update((s0 + margin, s1 - margin))
    pts = sorted(pts)
    out = []
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(round((b - a) / target_edge)))
        out.append(np.linspace(a, b, n + 1)[:-1])
    out.append([s1])
    return np.concatenate(out)


def _tube_facets(n_stations, n_circ, cap_lo_vertex, cap_hi_vertex):
    """Quad-strip lateral facets plus cap fans; returns (facets, wall indices)."""
    facets = []
    wall = []
    for i in range(n_stations - 1):
        for j in range(n_circ):
            a = i * n_circ + j
            b = i * n_circ + (j + 1) % n_circ
            c = (i + 1) * n_circ + j
            d = (i + 1) * n_circ + (j + 1) % n_circ
            wall.append(len(facets))
            facets.append([a, b, d])
            wall.append(len(facets))
            facets.append([a, d, c])
    first = 0
    last = (n_stations - 1) * n_circ
    for j in range(n_circ):
        facets.append([cap_lo_vertex, first + (j + 1) % n_circ, first + j])
        facets.append([cap_hi_vertex, last + j, last + (j + 1) % n_circ])
    return np.asarray(facets, dtype=np.int64), wall


def _wall_in_span(surf, wall_idx, axis, lo, hi):
    a, b, c = surf.facet_corners(wall_idx)
    coord = np.stack([a[:, axis], b[:, axis], c[:, axis]])
    keep = (coord.min(axis=0) >= lo - 1e-12) & (coord.max(axis=0) <= hi + 1e-12)
    return wall_idx[keep]
