"""Discrete delta kernel and Eulerian<->Lagrangian transfer operators.

The same sparse weight matrix serves interpolation (grid -> surface points)
and force spreading (surface points -> grid), which makes the two transfers
discrete adjoints and is what the implicit boundary-force solve relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CouplingError
from .grid import EulerianGrid
from .surface import LagrangianCloud


def delta_1d(r):
    """Four-point regularized delta, support |r| < 2.

    Piecewise: (3 - 2|r| + sqrt(1 + 4|r| - 4 r^2)) / 8 for |r| <= 1,
    (5 - 2|r| - sqrt(-7 + 12|r| - 4 r^2)) / 8 for 1 < |r| <= 2, else 0.
    Even, continuous at |r| = 1 and 2; satisfies the zeroth/first moment and
    sum-of-squares (= 3/8) lattice identities.
    """
    r = np.abs(np.asarray(r, dtype=float))
    out = np.zeros_like(r)
    inner = r <= 1.0
    outer = (r > 1.0) & (r <= 2.0)
    ri = r[inner]
    out[inner] = (3.0 - 2.0 * ri + np.sqrt(1.0 + 4.0 * ri - 4.0 * ri * ri)) / 8.0
    ro = r[outer]
    out[outer] = (5.0 - 2.0 * ro - np.sqrt(-7.0 + 12.0 * ro - 4.0 * ro * ro)) / 8.0
    return out if out.ndim else float(out)


def kernel_3d(x, X, h: float):
    """Tensor-product kernel (1/h^3) prod_a delta((x_a - X_a)/h); units m^-3."""
    x = np.asarray(x, dtype=float)
    X = np.asarray(X, dtype=float)
    r = (x - X) / h
    w = delta_1d(r[..., 0]) * delta_1d(r[..., 1]) * delta_1d(r[..., 2])
    return w / h ** 3


@dataclass
class CouplingMatrix:
    """Sparse M x N kernel weights D_ij between cloud points and active nodes."""

    D: sp.csr_matrix
    h: float

    @property
    def M(self) -> int:
        return self.D.shape[0]

    @property
    def N(self) -> int:
        return self.D.shape[1]

    def row_sums(self) -> np.ndarray:
        """h^3-weighted row sums; each equals 1 by the kernel moment identity."""
        return np.asarray(self.D.sum(axis=1)).ravel() * self.h ** 3


def build_coupling(grid: EulerianGrid, cloud) -> CouplingMatrix:
    """Assemble kernel weights between every Lagrangian point and the active
    nodes inside its 4x4x4 support block.

    ``cloud`` is a :class:`LagrangianCloud` or a bare (M, 3) point array.
    Raises :class:`CouplingError` naming the first point whose support
    requires a node that is outside the grid or inactive (crop band too
    small); silent truncation would break the moment identities the force
    solve depends on.
    """
    X = np.asarray(getattr(cloud, "points", cloud), dtype=float)
    M = X.shape[0]
    if M == 0:
        raise CouplingError("cloud has no Lagrangian points")
    h = grid.h
    s = (X - grid.box.min_corner) / h                       # lattice coordinates
    base = np.floor(s).astype(np.int64) - 1                 # (M, 3)
    offs = np.arange(4)
    oi, oj, ok = np.meshgrid(offs, offs, offs, indexing="ij")
    block = np.stack([oi.ravel(), oj.ravel(), ok.ravel()], axis=1)  # (64, 3)
    idx = base[:, None, :] + block[None, :, :]              # (M, 64, 3)
    r = s[:, None, :] - idx
    w = delta_1d(r[..., 0]) * delta_1d(r[..., 1]) * delta_1d(r[..., 2])  # (M, 64)

    in_bounds = ((idx >= 0) & (idx < grid.dims[None, None, :])).all(axis=2)
    gflat = np.zeros(idx.shape[:2], dtype=np.int64)
    ib = np.flatnonzero(in_bounds.ravel())
    flat_idx = idx.reshape(-1, 3)[ib]
    gflat.ravel()[ib] = grid.ijk_to_global(flat_idx[:, 0], flat_idx[:, 1], flat_idx[:, 2])
    act = np.full(idx.shape[:2], -1, dtype=np.int64)
    act.ravel()[ib] = grid.global_to_active[gflat.ravel()[ib]]

    needed = w > 0.0
    bad = needed & (act < 0)
    if bad.any():
        p = int(np.flatnonzero(bad.any(axis=1))[0])
        raise CouplingError(
            f"Lagrangian point {p} at {X[p]} has kernel support outside the "
            "active region (crop band too small or point too close to the box faces)"
        )
    rows = np.repeat(np.arange(M), needed.sum(axis=1))
    cols = act[needed]
    data = w[needed] / h ** 3
    D = sp.csr_matrix((data, (rows, cols)), shape=(M, grid.N))
    return CouplingMatrix(D=D, h=h)


def interpolate(coupling: CouplingMatrix, u: np.ndarray, h: float | None = None) -> np.ndarray:
    """Velocities (or any nodal field) at the Lagrangian points:
    U_i = sum_j u_j D_ij h^3."""
    h = coupling.h if h is None else h
    return coupling.D @ u * h ** 3


def spread(coupling: CouplingMatrix, F: np.ndarray, dS: np.ndarray) -> np.ndarray:
    """Body-force density on the grid: f_j = sum_i F_i D_ij dS_i (N/m^3 from N/m^2)."""
    F = np.asarray(F, dtype=float)
    weighted = F * np.asarray(dS, dtype=float).reshape(-1, *([1] * (F.ndim - 1)))
    return coupling.D.T @ weighted
