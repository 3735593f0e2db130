"""Postprocessing: analytic references, error norms, meshless surface
derivatives, wall shear stress, and field export.

Surface derivatives use moment-condition collocation weights (weighted
least-squares with a Gaussian window) that reproduce polynomials up to the
requested order exactly, evaluated on a cloud made of the wall points plus an
interior collar so one-sided wall gradients are stable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import ConfigurationError, SingularSystemError
from .grid import EulerianGrid, FieldState

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Analytic references and error norms
# --------------------------------------------------------------------------


def poiseuille_exact(r, R: float, mu: float, dpdz: float):
    """Axial velocity of developed laminar tube flow at radius r.

    u(r) = U_max (1 - (r/R)^2) with U_max = -R^2/(4 mu) dp/dz.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r > R * (1 + 1e-12)):
        raise ValueError("radius exceeds the tube radius")
    u_max = -R ** 2 / (4.0 * mu) * dpdz
    out = u_max * (1.0 - (r / R) ** 2)
    return float(out) if out.ndim == 0 else out


@dataclass
class ErrorReport:
    """Max-abs and (1/N) sqrt(sum of squares) norms, with per-component rows
    for vector samples."""

    l_inf: float
    l_2: float
    n_samples: int
    per_component: np.ndarray | None = None   # (3, 2): [L_inf, L_2] rows


def error_norms(numerical: np.ndarray, exact: np.ndarray) -> ErrorReport:
    num = np.asarray(numerical, dtype=float)
    ex = np.asarray(exact, dtype=float)
    if num.shape != ex.shape:
        raise ValueError(f"shape mismatch {num.shape} vs {ex.shape}")
    if num.size == 0:
        raise ValueError("empty sample set")
    diff = num - ex
    n = diff.shape[0]
    if diff.ndim == 1:
        return ErrorReport(
            l_inf=float(np.abs(diff).max()),
            l_2=float(np.sqrt((diff ** 2).sum()) / n),
            n_samples=n,
        )
    per = np.stack([
        np.abs(diff).max(axis=0),
        np.sqrt((diff ** 2).sum(axis=0)) / n,
    ], axis=1)
    return ErrorReport(
        l_inf=float(per[:, 0].max()),
        l_2=float(per[:, 1].max()),
        n_samples=n,
        per_component=per,
    )


def convergence_order(err_coarse: float, err_fine: float, ratio: float = 2.0) -> float:
    """Observed order between two resolutions differing by ``ratio`` in h."""
    return float(np.log(err_coarse / err_fine) / np.log(ratio))


# --------------------------------------------------------------------------
# Meshless derivative operators
# --------------------------------------------------------------------------

_ORDER2_POWERS = np.array([
    [0, 0, 0],
    [1, 0, 0], [0, 1, 0], [0, 0, 1],
    [2, 0, 0], [0, 2, 0], [0, 0, 2],
    [1, 1, 0], [1, 0, 1], [0, 1, 1],
], dtype=np.int64)


def _monomial_powers(order: int) -> np.ndarray:
    if order == 2:
        return _ORDER2_POWERS
    out = [
        (i, j, k)
        for total in range(order + 1)
        for i in range(total + 1)
        for j in range(total - i + 1)
        for k in (total - i - j,)
    ]
    return np.asarray(out, dtype=np.int64)


@dataclass
class DerivativeOperators:
    """First-derivative collocation weights: three (n_eval x n_cloud) sparse
    operators, one per spatial direction, polynomial-exact to the stored order."""

    Dx: sp.csr_matrix
    Dy: sp.csr_matrix
    Dz: sp.csr_matrix
    order: int
    cutoff: np.ndarray            # (n_eval,) realized cutoff radii

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """(n_eval, 3) gradient of scalar samples, or (n_eval, 3, 3) Jacobian
        grad[i, a, b] = d u_a / d x_b for (n_cloud, 3) samples."""
        f = np.asarray(f, dtype=float)
        if f.ndim == 1:
            return np.column_stack([self.Dx @ f, self.Dy @ f, self.Dz @ f])
        return np.stack(
            [np.column_stack([self.Dx @ f[:, a], self.Dy @ f[:, a], self.Dz @ f[:, a]])
             for a in range(f.shape[1])], axis=1,
        )


def build_dcpse(points: np.ndarray, order: int = 2, h_local: float | None = None,
                eval_idx: np.ndarray | None = None, cutoff_factor: float = 3.5,
                safety: int = 2) -> DerivativeOperators:
    """Build first-derivative operators on a point cloud.

    For each evaluation point, neighbours within an adaptively grown cutoff
    (start ``cutoff_factor * h_local``) enter a weighted least-squares moment
    system whose solution yields weights that differentiate all monomials up
    to ``order`` exactly. Requires at least ``safety *`` (basis size)
    neighbours; degenerate neighbourhoods (rank-deficient moment matrix) raise
    an error naming the point.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    ev = np.arange(n) if eval_idx is None else np.asarray(eval_idx, dtype=np.int64)
    if h_local is None:
        d, _ = cKDTree(pts).query(pts[ev[: min(200, len(ev))]], k=2)
        h_local = float(np.median(d[:, 1]))
    powers = _monomial_powers(order)
    nb_min = safety * len(powers)
    tree = cKDTree(pts)
    eps = h_local

    rows, cols, wx, wy, wz, cutoffs = [], [], [], [], [], []
    b = np.zeros((len(powers), 3))
    for a in range(3):
        b[np.flatnonzero((powers == np.eye(3, dtype=int)[a]).all(axis=1))[0], a] = 1.0 / eps

    for row, i in enumerate(np.asarray(ev)):
        r = cutoff_factor * h_local
        for _ in range(12):
            nbr = tree.query_ball_point(pts[i], r)
            if len(nbr) >= nb_min:
                break
            r *= 1.3
        else:
            raise ConfigurationError(
                f"point {int(i)} has only {len(nbr)} neighbours "
                f"(need {nb_min}); cloud too sparse for order {order}"
            )
        nbr = np.asarray(nbr, dtype=np.int64)
        z = (pts[nbr] - pts[i]) / eps
        w = np.exp(-(z ** 2).sum(axis=1))
        V = np.prod(z[:, None, :] ** powers[None, :, :], axis=2)   # (k, nb)
        G = V.T @ (w[:, None] * V)
        try:
            lu = sla.lu_factor(G)
            avec = sla.lu_solve(lu, b)
            avec += sla.lu_solve(lu, b - G @ avec)    # one refinement step
        except (sla.LinAlgError, ValueError):
            raise SingularSystemError(
                f"degenerate neighbourhood at point {int(i)}: moment matrix singular"
            ) from None
        if np.abs(b - G @ avec).max() > 1e-8 * max(np.abs(b).max(), 1e-300):
            raise SingularSystemError(
                f"degenerate neighbourhood at point {int(i)}: moment conditions "
                "not satisfiable (coplanar or rank-deficient samples)"
            )
        weights = (w[:, None] * V) @ avec            # (k, 3)
        rows.append(np.full(len(nbr), row, dtype=np.int64))
        cols.append(nbr)
        wx.append(weights[:, 0])
        wy.append(weights[:, 1])
        wz.append(weights[:, 2])
        cutoffs.append(r)

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    shape = (len(ev), n)
    mats = [
        sp.csr_matrix((np.concatenate(w), (rows, cols)), shape=shape)
        for w in (wx, wy, wz)
    ]
    return DerivativeOperators(Dx=mats[0], Dy=mats[1], Dz=mats[2],
                               order=order, cutoff=np.asarray(cutoffs))


# --------------------------------------------------------------------------
# Wall shear stress
# --------------------------------------------------------------------------


@dataclass
class WSSField:
    strain: np.ndarray        # (n, 3, 3) s^-1
    traction: np.ndarray      # (n, 3) Pa
    tangential: np.ndarray    # (n, 3) Pa
    magnitude: np.ndarray     # (n,) Pa


def wall_shear_stress(ops: DerivativeOperators, u_samples: np.ndarray,
                      normals: np.ndarray, mu: float) -> WSSField:
    """Viscous traction decomposition on the wall.

    strain = sym(grad u) from the meshless operators, traction
    t = 2 mu strain . n_hat, tangential part t_s = t - (t . n_hat) n_hat,
    and the wall shear stress magnitude |t_s|.
    """
    grad = ops.gradient(np.asarray(u_samples, dtype=float))   # (n, 3, 3)
    strain = 0.5 * (grad + np.swapaxes(grad, 1, 2))
    nrm = np.asarray(normals, dtype=float)
    traction = 2.0 * mu * np.einsum("nab,nb->na", strain, nrm)
    t_n = np.einsum("na,na->n", traction, nrm)
    tangential = traction - t_n[:, None] * nrm
    return WSSField(
        strain=strain, traction=traction, tangential=tangential,
        magnitude=np.linalg.norm(tangential, axis=1),
    )


def make_wss_cloud(cloud, h: float, offsets=(1.0, 2.0)):
    """Wall points plus interior collar layers offset along the inward normal.

    Returns ``(points, eval_idx)`` where the first ``M`` rows are the wall
    points themselves (the evaluation set).
    """
    layers = [cloud.points]
    for c in offsets:
        layers.append(cloud.points - c * h * cloud.normals)
    pts = np.concatenate(layers)
    return pts, np.arange(cloud.M)


# --------------------------------------------------------------------------
# Sampling and export
# --------------------------------------------------------------------------


def trilinear_sample(grid: EulerianGrid, f: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of an active-node field at arbitrary points.

    Returns NaN where any of the eight cell corners is inactive or outside.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    s = (pts - grid.box.min_corner) / grid.h
    i0 = np.floor(s).astype(np.int64)
    i0 = np.minimum(i0, np.asarray(grid.dims) - 2)   # clamp so x=xmax stays in the last cell
    i0 = np.maximum(i0, 0)
    frac = s - i0
    comp_shape = f.shape[1:]
    out = np.zeros((len(pts),) + comp_shape)
    valid = np.ones(len(pts), dtype=bool)
    inside = ((s >= -1e-9) & (s <= np.asarray(grid.dims) - 1 + 1e-9)).all(axis=1)
    valid &= inside
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                gi = grid.ijk_to_global(i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz)
                gi = np.clip(gi, 0, grid.n_total - 1)
                ai = grid.global_to_active[gi]
                valid &= ai >= 0
                w = (
                    (frac[:, 0] if dx else 1 - frac[:, 0])
                    * (frac[:, 1] if dy else 1 - frac[:, 1])
                    * (frac[:, 2] if dz else 1 - frac[:, 2])
                )
                vals = f[np.clip(ai, 0, None)]
                out += w.reshape((-1,) + (1,) * len(comp_shape)) * vals
    out[~valid] = np.nan
    return out


def _fmt(values) -> str:
    return " ".join("%.17g" % v for v in np.asarray(values, dtype=float).ravel())


def write_vtk_structured(grid: EulerianGrid, fields: dict, path, fill=0.0) -> None:
    """Legacy-VTK ASCII structured-points file of active-node fields.

    Inactive lattice nodes carry ``fill``; an ``active`` scalar records the
    mask. Scalars are (N,) arrays, vectors (N, 3).
    """
    nx, ny, nz = (int(v) for v in grid.dims)
    lines = [
        "# vtk DataFile Version 3.0",
        "ibflow fields",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} {nz}",
        "ORIGIN " + _fmt(grid.box.min_corner),
        f"SPACING {_fmt([grid.h, grid.h, grid.h])}",
        f"POINT_DATA {grid.n_total}",
    ]
    # VTK structured points iterate x fastest; our flat order is z fastest
    def vtk_order(dense):
        return np.moveaxis(dense, (0, 1, 2), (2, 1, 0)).reshape(dense.shape[0] * dense.shape[1] * dense.shape[2], -1)

    active = np.zeros(grid.n_total, dtype=float)
    active[grid.active_to_global] = 1.0
    lines.append("SCALARS active int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(str(int(v)) for v in vtk_order(active.reshape(nx, ny, nz, 1), ).ravel())
    for name, f in fields.items():
        dense = grid.to_dense(np.asarray(f, dtype=float), fill=fill)
        if f.ndim == 1:
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend("%.17g" % v for v in vtk_order(dense.reshape(nx, ny, nz, 1)).ravel())
        else:
            lines.append(f"VECTORS {name} double")
            lines.extend(_fmt(row) for row in vtk_order(dense))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk_structured(path):
    """Re-read a file written by :func:`write_vtk_structured` (round-trip checks)."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    dims = None
    origin = spacing = None
    fields = {}
    i = 0
    while i < len(tokens):
        t = tokens[i].split()
        if not t:
            i += 1
            continue
        if t[0] == "DIMENSIONS":
            dims = tuple(int(v) for v in t[1:4])
        elif t[0] == "ORIGIN":
            origin = np.array([float(v) for v in t[1:4]])
        elif t[0] == "SPACING":
            spacing = np.array([float(v) for v in t[1:4]])
        elif t[0] == "SCALARS":
            name = t[1]
            n = dims[0] * dims[1] * dims[2]
            vals = np.array([float(tokens[j]) for j in range(i + 2, i + 2 + n)])
            fields[name] = _from_vtk_order(vals.reshape(-1, 1), dims).ravel()
            i += 1 + n
        elif t[0] == "VECTORS":
            name = t[1]
            n = dims[0] * dims[1] * dims[2]
            vals = np.array([[float(x) for x in tokens[j].split()]
                             for j in range(i + 1, i + 1 + n)])
            fields[name] = _from_vtk_order(vals, dims)
            i += n
        i += 1
    return {"dims": dims, "origin": origin, "spacing": spacing, "fields": fields}


def _from_vtk_order(flat, dims):
    nx, ny, nz = dims
    a = flat.reshape(nz, ny, nx, -1)
    return np.moveaxis(a, (0, 1, 2), (2, 1, 0)).reshape(nx * ny * nz, -1)


def write_vtk_polydata(points: np.ndarray, path, point_data: dict | None = None) -> None:
    """Legacy-VTK ASCII polydata point cloud with per-point scalars/vectors."""
    pts = np.atleast_2d(points)
    n = len(pts)
    lines = [
        "# vtk DataFile Version 3.0",
        "ibflow surface data",
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {n} double",
    ]
    lines.extend(_fmt(p) for p in pts)
    lines.append(f"VERTICES {n} {2 * n}")
    lines.extend(f"1 {i}" for i in range(n))
    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, arr in point_data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend("%.17g" % v for v in arr)
            else:
                lines.append(f"VECTORS {name} double")
                lines.extend(_fmt(row) for row in arr)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def probe_line(grid: EulerianGrid, fields: dict, start, end, n: int) -> dict:
    """Sample fields at n points on a segment; returns arrays keyed by name
    plus 's' (arclength) and 'xyz'."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    ts = np.linspace(0.0, 1.0, n)
    pts = start[None, :] + ts[:, None] * (end - start)[None, :]
    out = {"s": ts * np.linalg.norm(end - start), "xyz": pts}
    for name, f in fields.items():
        out[name] = trilinear_sample(grid, np.asarray(f), pts)
    return out


def write_probe_csv(probe: dict, path) -> None:
    cols = ["s", "x", "y", "z"]
    data = [probe["s"], probe["xyz"][:, 0], probe["xyz"][:, 1], probe["xyz"][:, 2]]
    for name, arr in probe.items():
        if name in ("s", "xyz"):
            continue
        arr = np.asarray(arr)
        if arr.ndim == 1 or arr.shape[1] == 1:
            cols.append(name)
            data.append(arr.ravel())
        else:
            for c, suffix in enumerate("xyz"[: arr.shape[1]]):
                cols.append(f"{name}_{suffix}")
                data.append(arr[:, c])
    np.savetxt(path, np.column_stack(data), delimiter=",",
               header=",".join(cols), comments="", fmt="%.17g")


def export_fields(state: FieldState, grid: EulerianGrid, cloud=None,
                  outdir=".", wss: WSSField | None = None) -> list:
    """Write the standard output set; returns the created paths."""
    import os

    os.makedirs(outdir, exist_ok=True)
    paths = []
    p = os.path.join(outdir, "fields.vtk")
    write_vtk_structured(grid, {"velocity": state.u_n, "pressure": state.p_n,
                                "body_force": state.f_body}, p)
    paths.append(p)
    if cloud is not None:
        data = {"normals": cloud.normals, "area": cloud.areas}
        if wss is not None:
            data.update({"wss": wss.magnitude, "traction": wss.traction,
                         "wall_shear": wss.tangential})
        p = os.path.join(outdir, "surface.vtk")
        write_vtk_polydata(cloud.points, p, data)
        paths.append(p)
    return paths
