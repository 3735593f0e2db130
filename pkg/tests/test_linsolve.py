from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp

from ibflow.errors import (ConfigurationError, SingularSystemError,
                           SolverConvergenceError)
from ibflow.linsolve import (DenseFactorization, SparseFactorization, cg_solve,
                             dense_factor_solve, krylov_solve,
                             relative_residual)


def test_cg_identity_single_iteration():
    A = sp.identity(20, format="csr")
    b = np.arange(20.0)
    x, rep = cg_solve(A, b, tol=1e-12)
    assert rep.iterations == 1
    assert np.allclose(x, b)


def test_cg_1d_laplacian_vs_tridiagonal_solve():
    n = 10
    main = np.full(n, 2.0)
    off = np.full(n - 1, -1.0)
    A = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    b = np.zeros(n)
    b[0] = 1.0
    x, rep = cg_solve(A, b, tol=1e-14)
    # independent direct tridiagonal (Thomas) solve
    c = off.copy().astype(float)
    d = main.copy()
    y = b.copy()
    for i in range(1, n):
        w = c[i - 1] / d[i - 1]
        d[i] -= w * (-1.0)
        y[i] -= w * y[i - 1]
    ref = np.zeros(n)
    ref[-1] = y[-1] / d[-1]
    for i in range(n - 2, -1, -1):
        ref[i] = (y[i] + ref[i + 1]) / d[i]
    assert np.abs(x - ref).max() <= 1e-12
    assert rep.converged


def test_cg_indefinite_breakdown():
    A = sp.diags([1.0, -1.0, 2.0]).tocsr()
    with pytest.raises(SingularSystemError):
        cg_solve(A, np.array([1.0, 1.0, 1.0]))


def test_cg_report_residual_is_true_residual():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((30, 30))
    A = sp.csr_matrix(M @ M.T + 30 * np.eye(30))
    b = rng.standard_normal(30)
    x, rep = cg_solve(A, b, tol=1e-12)
    assert np.isclose(rep.residual, relative_residual(A, x, b), rtol=1e-12, atol=0)


def test_residual_recomputation_detects_perturbation():
    # a drifted iterate must show up in the recomputed report
    rng = np.random.default_rng(1)
    A = sp.csr_matrix(np.diag(rng.uniform(1, 2, 25)))
    b = rng.standard_normal(25)
    x, rep = cg_solve(A, b, tol=1e-13)
    x_bad = x + 1e-3
    assert relative_residual(A, x_bad, b) > 100 * rep.residual


def test_krylov_diagonal_system():
    A = sp.diags(np.linspace(1, 3, 40)).tocsr()
    b = np.ones(40)
    x, rep = krylov_solve(A, b, tol=1e-12)
    assert rep.iterations <= 2
    assert np.abs(A @ x - b).max() <= 1e-10


def test_krylov_vs_dense_lu():
    rng = np.random.default_rng(4)
    n = 60
    M = rng.standard_normal((n, n)) + n * np.eye(n)
    A = sp.csr_matrix(M)
    b = rng.standard_normal(n)
    x, rep = krylov_solve(A, b, tol=1e-12)
    ref = np.linalg.solve(M, b)
    assert np.abs(x - ref).max() <= 1e-10 * np.abs(ref).max()


def test_krylov_singular_reports_failure():
    A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(SolverConvergenceError) as exc:
        krylov_solve(A, np.array([1.0, 1.0]), tol=1e-12, max_iter=50)
    assert exc.value.report.converged is False


def test_dense_identity():
    B = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(dense_factor_solve(np.eye(4), B), B)


def _hilbert_exact_inverse(n):
    H = [[Fraction(1, i + j + 1) for j in range(n)] for i in range(n)]
    aug = [row + [Fraction(int(i == k)) for k in range(n)] for i, row in enumerate(H)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(aug[r][col]))
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = 1 / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[col])]
    return np.array([[float(v) for v in row[n:]] for row in aug])


def test_dense_hilbert_vs_rational_inverse():
    n = 5
    H = np.array([[1.0 / (i + j + 1) for j in range(n)] for i in range(n)])
    X = dense_factor_solve(H, np.eye(n))
    assert np.abs(X - _hilbert_exact_inverse(n)).max() <= 1e-8 * np.abs(X).max()


def test_dense_size_cap():
    with pytest.raises(ConfigurationError):
        DenseFactorization(np.eye(3), size_cap=2)


def test_dense_singular():
    A = np.ones((4, 4))
    with pytest.raises(SingularSystemError):
        DenseFactorization(A)


def test_dense_symmetric_uses_cholesky():
    rng = np.random.default_rng(9)
    M = rng.standard_normal((15, 15))
    A = M @ M.T + 15 * np.eye(15)
    f = DenseFactorization(A)
    assert f.symmetric
    b = rng.standard_normal(15)
    assert np.abs(A @ f.solve(b) - b).max() <= 1e-10
    assert f.condition_estimate() >= 1.0


def test_dense_factorization_reused_for_multiple_rhs():
    rng = np.random.default_rng(10)
    A = rng.standard_normal((20, 20)) + 20 * np.eye(20)
    f = DenseFactorization(A)
    B = rng.standard_normal((20, 3))
    X = f.solve(B)
    assert np.abs(A @ X - B).max() <= 1e-10


def test_sparse_factorization_roundtrip():
    rng = np.random.default_rng(2)
    n = 50
    A = sp.diags([np.full(n - 1, -1.0), np.full(n, 4.0), np.full(n - 1, -1.0)],
                 [-1, 0, 1]).tocsr()
    solver = SparseFactorization(A)
    b = rng.standard_normal(n)
    assert np.abs(A @ solver.solve(b) - b).max() <= 1e-12
