"""
MINRES・疎行列分解・一般化固有値のテスト
"""

import types

import numpy as np
import pytest
import scipy.sparse as sp

import krylov
from krylov import (NotPositiveDefiniteError, PreconditionerBreakdownError, dense_solve,
                    generalized_extreme_eigs, minres, sparse_spd_factorize)


def identity(r):
    return r.copy()


def random_indefinite(n, seed=0):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigs = np.concatenate([np.linspace(1.0, 3.0, n // 2), -np.linspace(0.5, 2.0, n - n // 2)])
    return Q @ np.diag(eigs) @ Q.T


def test_minres_identity_converges_in_one_iteration():
    b = np.arange(1.0, 6.0)
    x, report = minres(identity, identity, b, 1e-12)
    assert report.iterations == 1
    assert report.converged
    assert np.allclose(x, b)


def test_minres_indefinite_diagonal():
    A = np.diag([1.0, -1.0])
    x, report = minres(lambda v: A @ v, identity, np.array([1.0, 1.0]), 1e-12)
    assert report.iterations <= 2
    assert np.allclose(x, [1.0, -1.0])


def test_minres_matches_direct_solve_with_preconditioner():
    A = random_indefinite(40)
    P = np.diag(np.linspace(1.0, 5.0, 40))
    b = np.ones(40)
    x, report = minres(lambda v: A @ v, lambda r: np.linalg.solve(P, r), b, 1e-12)
    assert report.converged
    assert np.allclose(x, dense_solve(A, b), atol=1e-8)
    # 前処理ノルムの残差は単調非増加
    assert all(b2 <= b1 * (1 + 1e-12) for b1, b2 in zip(report.residuals, report.residuals[1:]))
    assert report.relative_residual <= 1e-12


def test_minres_zero_rhs():
    x, report = minres(identity, identity, np.zeros(4))
    assert report.iterations == 0
    assert report.converged
    assert np.all(x == 0)


def test_minres_iteration_limit():
    A = random_indefinite(30, seed=1)
    x, report = minres(lambda v: A @ v, identity, np.ones(30), 1e-14, max_iter=3)
    assert report.iterations == 3
    assert not report.converged


def test_minres_rejects_indefinite_preconditioner():
    with pytest.raises(PreconditionerBreakdownError):
        minres(identity, lambda r: -r, np.ones(3))


def test_minres_rejects_non_finite_rhs():
    with pytest.raises(ValueError):
        minres(identity, identity, np.array([1.0, np.nan]))


def test_sparse_cholesky_solves_spd_system():
    n = 50
    M = sp.diags([-np.ones(n - 1), 2.5 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format='csr')
    factor = sparse_spd_factorize(M)
    b = np.linspace(0.0, 1.0, n)
    assert np.allclose(M @ factor.solve(b), b)


def test_sparse_cholesky_rejects_indefinite_and_nonsymmetric():
    with pytest.raises(NotPositiveDefiniteError):
        sparse_spd_factorize(sp.diags([1.0, -1.0, 2.0]))
    with pytest.raises(NotPositiveDefiniteError):
        sparse_spd_factorize(sp.csr_matrix(np.array([[2.0, 1.0], [0.0, 2.0]])))


def test_superlu_reports_negative_pivot(monkeypatch):
    monkeypatch.setattr(krylov, '_HAS_CHOLMOD', False)
    with pytest.raises(NotPositiveDefiniteError, match='正でないピボット'):
        sparse_spd_factorize(sp.diags([1.0, -1.0, 2.0], format='csc'))


def test_superlu_reports_non_diagonal_pivoting(monkeypatch):
    monkeypatch.setattr(krylov, '_HAS_CHOLMOD', False)
    swapped = types.SimpleNamespace(perm_r=np.array([1, 0]), perm_c=np.array([0, 1]), U=sp.identity(2, format='csc'))
    monkeypatch.setattr(krylov.spla, 'splu', lambda *args, **kwargs: swapped)
    with pytest.raises(NotPositiveDefiniteError, match='並べ替え') as info:
        sparse_spd_factorize(sp.identity(2, format='csc'))
    assert 'ピボットがあります' not in str(info.value)


def test_generalized_eigs_dense():
    B = sp.diags([1.0, 2.0, 3.0])
    report = generalized_extreme_eigs(2.0 * B, B)
    assert np.allclose(report.eigenvalues, 2.0)
    assert np.isclose(report.condition, 1.0)
    report = generalized_extreme_eigs(sp.diags([1.0, 3.0]), sp.identity(2))
    assert np.allclose(report.extremes, (1.0, 3.0))
    assert report.method == 'dense'


def test_generalized_eigs_iterative():
    n = 50
    A = sp.diags(np.concatenate([-np.arange(1.0, 11.0), np.arange(2.0, 42.0)]))
    report = generalized_extreme_eigs(A, sp.identity(n), dense_limit=0, lanczos_steps=n)
    assert report.method == 'lanczos'
    assert np.isclose(report.minimum, -10.0)
    assert np.isclose(report.maximum, 41.0)
    assert np.isclose(report.min_abs, 1.0)
    assert np.isclose(report.max_abs, 41.0)


def test_generalized_eigs_shape_mismatch():
    with pytest.raises(ValueError):
        generalized_extreme_eigs(sp.identity(2), sp.identity(3))


if __name__ == "__main__":
    test_minres_identity_converges_in_one_iteration()
    test_minres_indefinite_diagonal()
    test_minres_matches_direct_solve_with_preconditioner()
    test_generalized_eigs_dense()
    print('Krylov 解法のテスト成功')
