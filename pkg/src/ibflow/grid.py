"""Uniform Cartesian grid, active-region cropping, and finite-difference stencils.

Fields live on the *active* subset of a node lattice. A freshly built grid has
every node active; cropping around an immersed solid deactivates far-exterior
nodes and rebuilds the active<->global index maps. All discrete operators
(gradient, divergence, Laplacian) act on length-N arrays indexed by active
node, using second-order central stencils where both axis neighbours are
active and second-order one-sided stencils at active-region boundaries.

Grids and their cached operators are immutable after construction and safe to
share; fields are plain numpy arrays owned by whoever created them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

# Node-count rounding: dims = round(extent/h) + 1, accepted only if the
# rounded lattice reproduces the extent to this relative tolerance.
EXTENT_RTOL = 1e-9

#: scalar fields are float64 arrays of shape (N,), vector fields (N, 3)
ScalarField = np.ndarray
VectorField = np.ndarray

_AXES = "xyz"


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box, corners in metres."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=float).reshape(3)
        hi = np.asarray(self.max_corner, dtype=float).reshape(3)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)
        if not np.all(hi > lo):
            raise ConfigurationError(
                f"box max_corner must exceed min_corner component-wise, got {lo} .. {hi}"
            )

    @property
    def extent(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))


class EulerianGrid:
    """Uniform node lattice with an active-node mask and index maps.

    Attributes
    ----------
    box : BoxDomain
    h : float
        Grid spacing, identical along all three axes.
    dims : (3,) int array
        Node counts per axis.
    active_mask : (n_total,) bool array over global flat indices.
    active_to_global : (N,) int array, global flat index of each active node.
    global_to_active : (n_total,) int array, inverse map, -1 where inactive.
    inside_solid : optional (N,) bool mask, set by :func:`crop_active_region`.
    """

    def __init__(self, box: BoxDomain, h: float, dims: np.ndarray,
                 active_mask: np.ndarray, inside_solid: np.ndarray | None = None):
        self.box = box
        self.h = float(h)
        self.dims = np.asarray(dims, dtype=np.int64).reshape(3)
        self.active_mask = np.asarray(active_mask, dtype=bool).reshape(-1)
        if self.active_mask.size != int(np.prod(self.dims)):
            raise ValueError("active_mask length does not match dims")
        self.active_to_global = np.flatnonzero(self.active_mask)
        self.global_to_active = np.full(self.active_mask.size, -1, dtype=np.int64)
        self.global_to_active[self.active_to_global] = np.arange(
            self.active_to_global.size, dtype=np.int64
        )
        self.inside_solid = inside_solid
        self._ops: _Stencils | None = None
        self._coords: np.ndarray | None = None

    # -- basic queries ---------------------------------------------------

    @property
    def N(self) -> int:
        """Number of active nodes."""
        return int(self.active_to_global.size)

    @property
    def n_total(self) -> int:
        return int(np.prod(self.dims))

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.box.min_corner[axis] + self.h * np.arange(self.dims[axis])

    def global_ijk(self, gidx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Decompose global flat indices (C order over i,j,k)."""
        ny, nz = int(self.dims[1]), int(self.dims[2])
        i = gidx // (ny * nz)
        rem = gidx - i * (ny * nz)
        return i, rem // nz, rem % nz

    def ijk_to_global(self, i, j, k) -> np.ndarray:
        ny, nz = int(self.dims[1]), int(self.dims[2])
        return (np.asarray(i) * ny + np.asarray(j)) * nz + np.asarray(k)

    def coords(self) -> np.ndarray:
        """(N, 3) coordinates of the active nodes."""
        if self._coords is None:
            i, j, k = self.global_ijk(self.active_to_global)
            self._coords = (
                self.box.min_corner
                + self.h * np.column_stack([i, j, k]).astype(float)
            )
        return self._coords

    def zeros_scalar(self) -> ScalarField:
        return np.zeros(self.N)

    def zeros_vector(self) -> VectorField:
        return np.zeros((self.N, 3))

    def to_dense(self, f: np.ndarray, fill=0.0) -> np.ndarray:
        """Scatter an active-node field onto the full (nx, ny, nz[, c]) lattice."""
        f = np.asarray(f)
        shape = tuple(self.dims) + f.shape[1:]
        out = np.full(shape, fill, dtype=f.dtype)
        out.reshape((self.n_total,) + f.shape[1:])[self.active_to_global] = f
        return out

    # -- stencil operators -------------------------------------------------

    @property
    def ops(self) -> "_Stencils":
        if self._ops is None:
            self._ops = _Stencils(self)
        return self._ops


@dataclass
class FieldState:
    """Velocity/pressure state carried between time steps (all on active nodes)."""

    u_n: VectorField
    u_star: VectorField
    u_next: VectorField
    p_n: ScalarField
    phi: ScalarField
    f_body: VectorField
    time: float = 0.0
    step: int = 0

    @classmethod
    def zeros(cls, grid: EulerianGrid) -> "FieldState":
        return cls(
            u_n=grid.zeros_vector(), u_star=grid.zeros_vector(),
            u_next=grid.zeros_vector(), p_n=grid.zeros_scalar(),
            phi=grid.zeros_scalar(), f_body=grid.zeros_vector(),
        )


def build_grid(box: BoxDomain, h: float) -> EulerianGrid:
    """Construct the full-box lattice with spacing ``h``; all nodes active.

    Node coordinates are ``min_corner + h*(i, j, k)``. Each box extent must be
    an integer multiple of ``h`` (to EXTENT_RTOL) and at least ``4*h`` so the
    four-point kernel support fits.
    """
    if h <= 0:
        raise ConfigurationError(f"grid spacing must be positive, got {h}")
    ext = box.extent
    dims = np.empty(3, dtype=np.int64)
    for a in range(3):
        if ext[a] < 4 * h - EXTENT_RTOL * ext[a]:
            # a bare grid is usable; coupling a boundary into it is not
            logger.warning(
                "box extent along %s is %.6g m, below the 4*h = %.6g m kernel "
                "halo; immersed-boundary coupling will fail on this grid",
                _AXES[a], ext[a], 4 * h,
            )
        cells = ext[a] / h
        ncell = int(round(cells))
        if abs(ncell * h - ext[a]) > EXTENT_RTOL * ext[a]:
            raise ConfigurationError(
                f"box extent along {_AXES[a]} ({ext[a]:.12g} m) is not an integer "
                f"multiple of h = {h:.12g} m (relative mismatch "
                f"{abs(ncell * h - ext[a]) / ext[a]:.3e} > {EXTENT_RTOL:.0e})"
            )
        dims[a] = ncell + 1
    mask = np.ones(int(np.prod(dims)), dtype=bool)
    return EulerianGrid(box, h, dims, mask)


def crop_active_region(grid: EulerianGrid, solid, band: float,
                       support_points: np.ndarray | None = None) -> EulerianGrid:
    """Deactivate nodes farther than ``band`` outside the closed surface ``solid``.

    A node stays active iff it lies inside the solid (on-surface counts as
    inside) or within distance ``band`` of the surface. ``band`` must be at
    least ``2*h`` so every Lagrangian kernel support stays inside the active
    region. ``support_points`` (e.g. the resampled Lagrangian points) keep
    their full 4x4x4 kernel blocks active regardless of band: the kernel
    support is an infinity-norm ball, so on walls with diagonal normals its
    corners can poke slightly past a Euclidean band. Returns a new grid with
    rebuilt index maps and an ``inside_solid`` mask over its active nodes; the
    inside-active fraction is logged.
    """
    from .surface import classify_lattice_points

    h = grid.h
    if band < 2 * h * (1 - 1e-12):
        raise ConfigurationError(
            f"crop band {band:.6g} m is below the kernel support 2*h = {2 * h:.6g} m"
        )
    gidx = np.arange(grid.n_total, dtype=np.int64)
    i, j, k = grid.global_ijk(gidx)
    pts = grid.box.min_corner + h * np.column_stack([i, j, k]).astype(float)
    inside, dist = classify_lattice_points(solid, pts, grid, band)
    keep = grid.active_mask & (inside | (dist <= band))
    if support_points is not None and len(support_points):
        keep |= grid.active_mask & _support_blocks(grid, np.asarray(support_points))
    new = EulerianGrid(grid.box, h, grid.dims, keep,
                       inside_solid=inside[np.flatnonzero(keep)])
    frac_before = _inside_fraction(inside, grid.active_mask)
    frac_after = _inside_fraction(inside, keep)
    logger.info(
        "crop: active nodes %d -> %d, inside-solid fraction %.3f -> %.3f",
        grid.N, new.N, frac_before, frac_after,
    )
    new.inside_fraction = frac_after
    return new


def _inside_fraction(inside_global: np.ndarray, mask: np.ndarray) -> float:
    n = int(mask.sum())
    return float((inside_global & mask).sum()) / n if n else 0.0


def _support_blocks(grid: EulerianGrid, pts: np.ndarray) -> np.ndarray:
    """Global mask of the 4x4x4 lattice blocks around the given points."""
    s = (pts - grid.box.min_corner) / grid.h
    base = np.floor(s).astype(np.int64) - 1
    offs = np.arange(4)
    oi, oj, ok = np.meshgrid(offs, offs, offs, indexing="ij")
    block = np.stack([oi.ravel(), oj.ravel(), ok.ravel()], axis=1)
    idx = (base[:, None, :] + block[None, :, :]).reshape(-1, 3)
    ok_mask = ((idx >= 0) & (idx < grid.dims[None, :])).all(axis=1)
    idx = idx[ok_mask]
    mask = np.zeros(grid.n_total, dtype=bool)
    mask[grid.ijk_to_global(idx[:, 0], idx[:, 1], idx[:, 2])] = True
    return mask


def active_inside_fraction(grid: EulerianGrid, solid) -> float:
    """Fraction of active nodes lying inside ``solid`` (tie: on-surface is inside)."""
    from .surface import point_in_solid

    if grid.inside_solid is not None:
        return float(grid.inside_solid.sum()) / grid.N
    return float(point_in_solid(solid, grid.coords()).sum()) / grid.N


# --------------------------------------------------------------------------
# Stencils
# --------------------------------------------------------------------------


class _Stencils:
    """Sparse first/second-derivative operators over active nodes.

    ``G[a]`` is the first derivative along axis ``a``: central where both
    axis neighbours are active, else one-sided second order, degrading to
    one-sided first order (counted in ``fallback_first_order``) when the
    active region is too thin. ``lap_compact`` sums the per-axis compact
    second differences; the public Laplacian is the composition div(grad(.))
    so that the projection identity holds exactly.
    """

    def __init__(self, grid: EulerianGrid):
        self.grid = grid
        self.fallback_first_order = 0
        self.G = [self._first_derivative(grid, a) for a in range(3)]
        self.D2 = [self._second_derivative(grid, a) for a in range(3)]
        self.lap_compact = (self.D2[0] + self.D2[1] + self.D2[2]).tocsr()
        self._lap_wide = None
        self._one_sided: list = [None, None, None]
        # boundary bookkeeping: nodes missing an active +-1 axis neighbour
        self.missing_lo, self.missing_hi = self._missing_neighbours(grid)
        self.boundary_mask = (self.missing_lo | self.missing_hi).any(axis=1)
        if self.fallback_first_order:
            logger.warning(
                "thin active region: %d stencil rows fell back to first order",
                self.fallback_first_order,
            )

    @property
    def lap_wide(self):
        """div(grad(.)) composition; exact annihilator for the projection."""
        if self._lap_wide is None:
            self._lap_wide = sum(Ga @ Ga for Ga in self.G).tocsr()
        return self._lap_wide

    def inward_neighbor(self, node: int, axis: int) -> int:
        """Active index of the node one step into the domain along ``axis``
        (away from whichever side is missing); -1 if neither side exists."""
        if self.missing_lo[node, axis] and not self.missing_hi[node, axis]:
            return int(self.shift_p1[axis][node])
        if self.missing_hi[node, axis] and not self.missing_lo[node, axis]:
            return int(self.shift_m1[axis][node])
        return -1

    def one_sided(self, axis: int):
        """(backward, forward) first-order difference pair for upwinding.

        A missing neighbour falls back to the opposite side so boundary rows
        stay consistent (they are overwritten by BC rows anyway).
        """
        if self._one_sided[axis] is None:
            grid = self.grid
            h = grid.h
            idx = np.arange(grid.N)
            mats = []
            for off in (-1, +1):
                nb = self._shift(grid, axis, off)
                alt = self._shift(grid, axis, -off)
                use_alt = nb < 0
                col = np.where(use_alt, alt, nb)
                sign = np.where(use_alt, -off, off)
                ok = col >= 0
                rows = np.concatenate([idx[ok], idx[ok]])
                cols = np.concatenate([idx[ok], col[ok]])
                vals = np.concatenate([-sign[ok] / h, sign[ok] / h])
                mats.append(sp.coo_matrix((vals, (rows, cols)),
                                          shape=(grid.N, grid.N)).tocsr())
            self._one_sided[axis] = tuple(mats)
        return self._one_sided[axis]

    # neighbour lookup: active index of node shifted by `off` along `axis`, -1 if absent
    def _shift(self, grid: EulerianGrid, axis: int, off: int) -> np.ndarray:
        i, j, k = grid.global_ijk(grid.active_to_global)
        ijk = [i.copy(), j.copy(), k.copy()]
        ijk[axis] = ijk[axis] + off
        ok = (ijk[axis] >= 0) & (ijk[axis] < grid.dims[axis])
        res = np.full(grid.N, -1, dtype=np.int64)
        g = grid.ijk_to_global(ijk[0][ok], ijk[1][ok], ijk[2][ok])
        res[np.flatnonzero(ok)] = grid.global_to_active[g]
        return res

    def _missing_neighbours(self, grid):
        self.shift_m1 = [self._shift(grid, a, -1) for a in range(3)]
        self.shift_p1 = [self._shift(grid, a, +1) for a in range(3)]
        lo = np.stack([s < 0 for s in self.shift_m1], axis=1)
        hi = np.stack([s < 0 for s in self.shift_p1], axis=1)
        return lo, hi

    def _first_derivative(self, grid, axis) -> sp.csr_matrix:
        h = grid.h
        n = grid.N
        m1 = self._shift(grid, axis, -1)
        p1 = self._shift(grid, axis, +1)
        p2 = self._shift(grid, axis, +2)
        m2 = self._shift(grid, axis, -2)
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(np.broadcast_to(v, r.shape).astype(float))

        idx = np.arange(n)
        central = (m1 >= 0) & (p1 >= 0)
        r = idx[central]
        add(r, m1[central], -0.5 / h)
        add(r, p1[central], +0.5 / h)

        fwd = (~central) & (m1 < 0) & (p1 >= 0)
        fwd2 = fwd & (p2 >= 0)
        r = idx[fwd2]
        add(r, r, -1.5 / h)
        add(r, p1[fwd2], 2.0 / h)
        add(r, p2[fwd2], -0.5 / h)
        fwd1 = fwd & (p2 < 0)
        r = idx[fwd1]
        add(r, r, -1.0 / h)
        add(r, p1[fwd1], 1.0 / h)

        bwd = (~central) & (p1 < 0) & (m1 >= 0)
        bwd2 = bwd & (m2 >= 0)
        r = idx[bwd2]
        add(r, r, 1.5 / h)
        add(r, m1[bwd2], -2.0 / h)
        add(r, m2[bwd2], 0.5 / h)
        bwd1 = bwd & (m2 < 0)
        r = idx[bwd1]
        add(r, r, 1.0 / h)
        add(r, m1[bwd1], -1.0 / h)

        self.fallback_first_order += int(fwd1.sum() + bwd1.sum())
        # isolated nodes (no axis neighbour at all) get a zero row
        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        return A.tocsr()

    def _second_derivative(self, grid, axis) -> sp.csr_matrix:
        h2 = grid.h ** 2
        n = grid.N
        m1 = self._shift(grid, axis, -1)
        p1 = self._shift(grid, axis, +1)
        p2 = self._shift(grid, axis, +2)
        p3 = self._shift(grid, axis, +3)
        m2 = self._shift(grid, axis, -2)
        m3 = self._shift(grid, axis, -3)
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(np.broadcast_to(v, r.shape).astype(float))

        idx = np.arange(n)
        central = (m1 >= 0) & (p1 >= 0)
        r = idx[central]
        add(r, m1[central], 1.0 / h2)
        add(r, r, -2.0 / h2)
        add(r, p1[central], 1.0 / h2)

        fwd = (~central) & (m1 < 0) & (p1 >= 0)
        fwd2 = fwd & (p2 >= 0) & (p3 >= 0)
        r = idx[fwd2]
        add(r, r, 2.0 / h2)
        add(r, p1[fwd2], -5.0 / h2)
        add(r, p2[fwd2], 4.0 / h2)
        add(r, p3[fwd2], -1.0 / h2)
        fwd1 = fwd & (p2 >= 0) & (p3 < 0)
        r = idx[fwd1]
        add(r, r, 1.0 / h2)
        add(r, p1[fwd1], -2.0 / h2)
        add(r, p2[fwd1], 1.0 / h2)

        bwd = (~central) & (p1 < 0) & (m1 >= 0)
        bwd2 = bwd & (m2 >= 0) & (m3 >= 0)
        r = idx[bwd2]
        add(r, r, 2.0 / h2)
        add(r, m1[bwd2], -5.0 / h2)
        add(r, m2[bwd2], 4.0 / h2)
        add(r, m3[bwd2], -1.0 / h2)
        bwd1 = bwd & (m2 >= 0) & (m3 < 0)
        r = idx[bwd1]
        add(r, r, 1.0 / h2)
        add(r, m1[bwd1], -2.0 / h2)
        add(r, m2[bwd1], 1.0 / h2)

        self.fallback_first_order += int((fwd & (p2 < 0)).sum() + (bwd & (m2 < 0)).sum())
        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        return A.tocsr()


def gradient(grid: EulerianGrid, p: ScalarField) -> VectorField:
    """(N, 3) gradient of a scalar field."""
    ops = grid.ops
    return np.column_stack([ops.G[a] @ p for a in range(3)])


def divergence(grid: EulerianGrid, u: VectorField) -> ScalarField:
    """Divergence of an (N, 3) vector field."""
    ops = grid.ops
    return ops.G[0] @ u[:, 0] + ops.G[1] @ u[:, 1] + ops.G[2] @ u[:, 2]


def laplacian(grid: EulerianGrid, q: np.ndarray) -> np.ndarray:
    """Laplacian as the literal composition divergence(gradient(.)), so the
    identity ``laplacian == divergence o gradient`` holds bitwise.

    Applies per component when ``q`` is a vector field.
    """
    if q.ndim == 1:
        return divergence(grid, gradient(grid, q))
    return np.column_stack(
        [divergence(grid, gradient(grid, q[:, c])) for c in range(q.shape[1])]
    )
