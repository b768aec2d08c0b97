"""
前処理付き MINRES、疎行列の直接解法、一般化固有値の診断
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from config import Config

logger = logging.getLogger(__name__)

try:
    from sksparse import cholmod
    _HAS_CHOLMOD = True
except ImportError:
    _HAS_CHOLMOD = False


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class PreconditionerBreakdownError(ArithmeticError):
    pass


@dataclass
class SolveReport:
    iterations: int
    residuals: list = field(default_factory=list)
    converged: bool = False
    relative_residual: float = 0.0
    wall_time: float = 0.0

    @property
    def initial_residual(self):
        return self.residuals[0] if self.residuals else 0.0


def minres(apply_A, apply_Pinv, b, rel_tol=1e-8, max_iter=None, callback=None):
    """
    前処理付き MINRES (初期値 0)。

    収束判定は前処理ノルム √(rᵀP⁻¹r) の初期値に対する比で行います。
    前処理の内積が負になった場合は PreconditionerBreakdownError を送出します。
    """
    start = time.perf_counter()
    b = np.asarray(b, dtype=float)
    n = len(b)
    if max_iter is None:
        max_iter = 10 * max(n, 1)
    if not np.all(np.isfinite(b)):
        raise ValueError("右辺に有限でない値が含まれています")

    x = np.zeros(n)
    r1 = b.copy()
    y = apply_Pinv(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise PreconditionerBreakdownError(f"前処理が正定値ではありません (内積 {beta1:.3e})")
    if beta1 == 0:
        return x, SolveReport(0, [0.0], True, 0.0, time.perf_counter() - start)
    beta1 = np.sqrt(beta1)

    eps = np.finfo(float).eps
    oldb = 0.0
    beta = beta1
    dbar = 0.0
    epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()
    residuals = [beta1]
    converged = False
    itn = 0

    while itn < max_iter:
        itn += 1
        v = y / beta
        y = apply_A(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = apply_Pinv(r2)
        oldb = beta
        beta = float(r2 @ y)
        if beta < 0:
            raise PreconditionerBreakdownError(f"前処理が正定値ではありません (反復 {itn}, 内積 {beta:.3e})")
        beta = np.sqrt(beta)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        residuals.append(phibar)
        logger.debug(f"MINRES 反復 {itn}: 相対残差 {phibar / beta1:.3e}")
        if callback is not None:
            callback(itn, x, phibar / beta1)
        if phibar <= rel_tol * beta1 or beta == 0.0:
            converged = True
            break

    report = SolveReport(itn, residuals, converged, residuals[-1] / beta1, time.perf_counter() - start)
    if not converged:
        logger.warning(f"MINRES が収束しませんでした: 反復 {itn}, 相対残差 {report.relative_residual:.3e}")
    return x, report


# ----------------------------------------------------------------------
# 直接解法
# ----------------------------------------------------------------------
class SparseCholesky:
    """対称正定値疎行列の分解。CHOLMOD が無ければ SuperLU の対称モードを使います"""

    def __init__(self, M):
        M = sp.csc_matrix(M, dtype=float)
        if M.shape[0] != M.shape[1]:
            raise ValueError(f"正方行列が必要です: {M.shape}")
        scale = abs(M).max() if M.nnz else 0.0
        if M.nnz and abs(M - M.T).max() > 1e-10 * scale:
            raise NotPositiveDefiniteError("行列が対称ではありません")
        self.shape = M.shape
        self.backend = 'cholmod' if _HAS_CHOLMOD else 'superlu'
        if self.shape[0] == 0:
            self._solve = lambda b: np.zeros(0)
            return
        if _HAS_CHOLMOD:
            try:
                self._factor = cholmod.cholesky(M)
            except cholmod.CholmodNotPositiveDefiniteError as e:
                raise NotPositiveDefiniteError(f"Cholesky分解に失敗しました: {e}")
            self._solve = self._factor
            return
        try:
            lu = spla.splu(M, permc_spec='MMD_AT_PLUS_A', diag_pivot_thresh=0.0,
                           options=dict(SymmetricMode=True))
        except RuntimeError as e:
            raise NotPositiveDefiniteError(f"分解に失敗しました: {e}")
        pivots = lu.U.diagonal()
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NotPositiveDefiniteError("対角ピボットのみで分解できませんでした（行と列の並べ替えが一致しません）")
        if np.any(pivots <= 0):
            raise NotPositiveDefiniteError(f"正でないピボットがあります (最小 {pivots.min():.3e})")
        self._factor = lu
        self._solve = lu.solve

    def solve(self, b):
        return self._solve(np.asarray(b, dtype=float))


def sparse_spd_factorize(M):
    return SparseCholesky(M)


def solve(factor, b):
    return factor.solve(b)


def dense_solve(A, b):
    """小規模な対称不定値系の照合用（密 LU）"""
    lu, piv = sla.lu_factor(np.asarray(A, dtype=float))
    return sla.lu_solve((lu, piv), np.asarray(b, dtype=float))


def sparse_solve(A, b):
    return spla.spsolve(sp.csc_matrix(A), b)


# ----------------------------------------------------------------------
# 一般化固有値
# ----------------------------------------------------------------------
@dataclass
class SpectrumReport:
    min_abs: float
    max_abs: float
    minimum: float
    maximum: float
    method: str
    eigenvalues: np.ndarray = None

    @property
    def condition(self):
        return self.max_abs / self.min_abs

    @property
    def extremes(self):
        return self.minimum, self.maximum


def _lanczos_extremes(A, factor, B, steps, seed=0):
    """B 内積での B⁻¹A の Lanczos（完全再直交化）。Ritz 値の両端を返します"""
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n)
    q /= np.sqrt(q @ (B @ q))
    Q, BQ = [q], [B @ q]
    alphas, betas = [], []
    for j in range(steps):
        w = factor.solve(A @ Q[j])
        alphas.append(float(Q[j] @ (A @ Q[j])))
        Qm = np.array(Q)
        w -= Qm.T @ (np.array(BQ) @ w)
        w -= Qm.T @ (np.array(BQ) @ w)
        Bw = B @ w
        beta = np.sqrt(max(float(w @ Bw), 0.0))
        if j == steps - 1 or beta < 1e-12 * max(abs(alphas[-1]), 1.0):
            break
        betas.append(beta)
        Q.append(w / beta)
        BQ.append(Bw / beta)
    ritz = sla.eigh_tridiagonal(np.array(alphas), np.array(betas[:len(alphas) - 1]), eigvals_only=True)
    return ritz.min(), ritz.max()


def generalized_extreme_eigs(A, B, dense_limit=None, lanczos_steps=200):
    """
    B⁻¹A の固有値（零でないスペクトル）の両端。
    次元が dense_limit 以下なら密な一般化固有値問題を解いて全スペクトルも返します。
    """
    if dense_limit is None:
        dense_limit = Config.DENSE_EIG_LIMIT
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise ValueError(f"行列の次元が一致しません: {A.shape}, {B.shape}")
    n = A.shape[0]
    if n <= dense_limit:
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        Bd = B.toarray() if sp.issparse(B) else np.asarray(B, dtype=float)
        try:
            eigs = sla.eigh(Ad, Bd, eigvals_only=True)
        except np.linalg.LinAlgError as e:
            raise NotPositiveDefiniteError(f"B が正定値ではありません: {e}")
        nonzero = eigs[np.abs(eigs) > 1e-12 * np.abs(eigs).max()]
        mags = np.abs(nonzero)
        return SpectrumReport(mags.min(), mags.max(), nonzero.min(), nonzero.max(), 'dense', eigs)

    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    factor = sparse_spd_factorize(B)
    lo, hi = _lanczos_extremes(A, factor, B, min(n, lanczos_steps))
    smallest = spla.eigsh(A, k=1, M=B.tocsc(), sigma=0.0, which='LM', return_eigenvectors=False)
    min_abs = float(np.abs(smallest).min())
    logger.info(f"Lanczos による固有値推定: [{lo:.4e}, {hi:.4e}], 最小絶対値 {min_abs:.4e}")
    return SpectrumReport(min_abs, max(abs(lo), abs(hi)), lo, hi, 'lanczos')
