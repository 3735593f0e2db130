"""Linear-algebra services: iterative sparse solvers and direct factorizations.

Reported residuals are always recomputed from the final iterate, never taken
from a recurrence. Iterative solvers use Jacobi preconditioning; the pressure
system in production runs is handled by a cached sparse LU since it is
assembled once and solved every step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, SingularSystemError, SolverConvergenceError

DENSE_SIZE_CAP = 20_000


@dataclass
class SolveReport:
    iterations: int
    residual: float          # relative, recomputed from the final iterate
    converged: bool


def relative_residual(A, x, b) -> float:
    """True relative residual ||Ax - b|| / ||b|| (1.0 convention for b = 0, x != 0)."""
    bnorm = np.linalg.norm(b)
    rnorm = np.linalg.norm(A @ x - b)
    if bnorm == 0.0:
        return 0.0 if rnorm == 0.0 else np.inf
    return float(rnorm / bnorm)


def _jacobi(A):
    d = np.asarray(A.diagonal(), dtype=float)
    d[d == 0.0] = 1.0
    return spla.LinearOperator(A.shape, matvec=lambda v: v / d)


def cg_solve(A, b, tol: float = 1e-10, max_iter: int | None = None,
             precondition: bool = True):
    """Preconditioned conjugate gradients for symmetric positive (semi)definite A.

    Returns ``(x, SolveReport)``. Raises :class:`SingularSystemError` on a
    breakdown (p'Ap <= 0, i.e. the operator is not positive on the Krylov
    space) and :class:`SolverConvergenceError` when max_iter is exhausted.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    max_iter = 10 * n if max_iter is None else max_iter
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)
    diag = np.asarray(A.diagonal(), dtype=float) if precondition else np.ones(n)
    diag = np.where(diag > 0, diag, 1.0)

    x = np.zeros(n)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            raise SingularSystemError(
                f"CG breakdown at iteration {it}: p'Ap = {pAp:.3e} <= 0 "
                "(matrix is not symmetric positive definite on the search space)"
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            return x, SolveReport(it, relative_residual(A, x, b), True)
        z = r / diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    report = SolveReport(max_iter, relative_residual(A, x, b), False)
    raise SolverConvergenceError(
        f"CG did not reach tol {tol:.1e} in {max_iter} iterations "
        f"(residual {report.residual:.3e})"
    )


def krylov_solve(A, b, tol: float = 1e-8, max_iter: int | None = None,
                 x0=None, precondition: bool = True):
    """BiCGSTAB for general (nonsymmetric) sparse systems, Jacobi preconditioned.

    Returns ``(x, SolveReport)``; raises :class:`SolverConvergenceError` with
    the report attached as ``.report`` when max_iter is exhausted or the
    method breaks down.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    max_iter = 20 * n if max_iter is None else max_iter
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0 and x0 is None:
        return np.zeros(n), SolveReport(0, 0.0, True)
    if x0 is not None and relative_residual(A, x0, b) <= tol:
        return np.asarray(x0, dtype=float), SolveReport(0, relative_residual(A, x0, b), True)
    count = {"n": 0}

    def cb(_):
        count["n"] += 1

    M = _jacobi(A) if precondition else None
    x, info = spla.bicgstab(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter,
                            M=M, callback=cb)
    res = relative_residual(A, x, b)
    if info < 0 or (info != 0 and res > 10 * tol):
        # breakdown: restart once from zero, then from GMRES
        x, info = spla.bicgstab(A, b, rtol=tol, atol=0.0, maxiter=max_iter,
                                M=M, callback=cb)
        res = relative_residual(A, x, b)
        if info != 0 or res > 10 * tol:
            x, info = spla.gmres(A, b, rtol=tol, atol=0.0, restart=50,
                                 maxiter=max(1, max_iter // 50), M=M, callback=cb,
                                 callback_type="legacy")
            res = relative_residual(A, x, b)
    report = SolveReport(count["n"], res, res <= 10 * tol)
    if not report.converged:
        err = SolverConvergenceError(
            f"iterative solve failed (info={info}) after {report.iterations} "
            f"iterations, residual {res:.3e} vs tol {tol:.1e}"
        )
        err.report = report
        raise err
    return x, report


class DenseFactorization:
    """Pivoted dense factorization reused across right-hand sides.

    Uses Cholesky when the matrix is symmetric (to 1e-12 relative), pivoted LU
    otherwise; detects singularity to working precision and reports a 1-norm
    condition estimate.
    """

    def __init__(self, A: np.ndarray, size_cap: int = DENSE_SIZE_CAP):
        A = np.ascontiguousarray(A, dtype=float)
        m, n = A.shape
        if m != n:
            raise ValueError(f"matrix must be square, got {A.shape}")
        if m == 0:
            raise SingularSystemError("cannot factor an empty (0 x 0) system")
        if m > size_cap:
            raise ConfigurationError(
                f"dense system size {m} exceeds the cap {size_cap}; "
                "use a coarser Lagrangian resampling (larger target_ds)"
            )
        self.n = m
        self._anorm = float(np.abs(A).sum(axis=0).max())
        scale = float(np.abs(A).max())
        self.symmetric = bool(np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(scale, 1e-300)))
        self._cho = None
        self._lu = None
        if self.symmetric:
            try:
                self._cho = sla.cho_factor(A, lower=True, check_finite=False)
            except sla.LinAlgError:
                self._cho = None
        if self._cho is None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                lu, piv = sla.lu_factor(A, check_finite=False)
            d = np.abs(np.diag(lu))
            if d.min() <= 1e-14 * max(d.max(), 1e-300):
                raise SingularSystemError(
                    "force/linsolve matrix is singular to working precision; "
                    "the Lagrangian spacing is likely too fine for the grid "
                    "(increase target_ds so ds/h stays above ~0.5)"
                )
            self._lu = (lu, piv)

    def solve(self, B: np.ndarray) -> np.ndarray:
        if self._cho is not None:
            return sla.cho_solve(self._cho, B, check_finite=False)
        return sla.lu_solve(self._lu, B, check_finite=False)

    def condition_estimate(self) -> float:
        """Approximate 1-norm condition number from the stored factorization."""
        if self._cho is not None:
            rcond, _ = sla.lapack.dpocon(self._cho[0], self._anorm, uplo="L")
        else:
            rcond, _ = sla.lapack.dgecon(self._lu[0], self._anorm, norm="1")
        return float(1.0 / rcond) if rcond > 0 else np.inf


def dense_factor_solve(A: np.ndarray, B: np.ndarray,
                       size_cap: int = DENSE_SIZE_CAP) -> np.ndarray:
    """Factor once, solve for all columns of B; residual checked to 1e-10 relative."""
    fact = DenseFactorization(A, size_cap=size_cap)
    X = fact.solve(B)
    bnorm = np.linalg.norm(B)
    if bnorm > 0:
        res = np.linalg.norm(A @ X - B) / bnorm
        if res > 1e-10:
            raise SolverConvergenceError(
                f"direct solve residual {res:.3e} exceeds 1e-10; condition "
                f"estimate {fact.condition_estimate():.3e}"
            )
    return X


class SparseFactorization:
    """Cached sparse LU (SuperLU) for systems assembled once and solved often."""

    def __init__(self, A: sp.spmatrix):
        self.A = A.tocsc()
        try:
            self._lu = spla.splu(self.A)
        except RuntimeError as err:
            raise SingularSystemError(f"sparse factorization failed: {err}") from None

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._lu.solve(b)
