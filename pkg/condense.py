"""
静的縮約: セル未知数をセルごとに消去してトレース未知数の Schur 系を作ります。

  S_A = A22 − A21 A11⁻¹ A21ᵀ,   b̄ = b2 − A21 A11⁻¹ b1

A11 はセルごとのブロック対角なので、セル単位の密な LU で処理します。
同じ仕組みで前処理ブロックの Schur 補元 S_P / S_P̂ も作ります。
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from assembly import _Accumulator
from krylov import sparse_spd_factorize
from spaces import CELL_FIELDS, TRACE_FIELDS

logger = logging.getLogger(__name__)

LOCAL_PIVOT_RTOL = 1e-13


class SingularLocalBlockError(ValueError):
    def __init__(self, cell, message=None):
        self.cell = cell
        super().__init__(message or f"セル {cell} の局所ブロックが特異です（パラメータを確認してください）")


class _CellwiseElimination:
    """
    セル順に並んだ A11（ブロック幅 block_size）と A21 から
    セルごとの LU と結合の密ブロックを保持します。
    """

    def __init__(self, A11, A21, block_size):
        A11 = sp.coo_matrix(A11)
        n = A11.shape[0]
        if block_size == 0 or n % block_size:
            raise ValueError(f"A11 の大きさ {n} がブロック幅 {block_size} で割り切れません")
        self.block_size = m = block_size
        self.num_cells = nc = n // m
        if np.any(A11.row // m != A11.col // m):
            raise ValueError("A11 がセルごとのブロック対角になっていません")
        blocks = np.zeros((nc, m, m))
        np.add.at(blocks, (A11.row // m, A11.row % m, A11.col % m), A11.data)

        self.factors = []
        for cell in range(nc):
            self.factors.append(self._factor(cell, blocks[cell]))

        A21 = sp.csc_matrix(A21)
        self.num_trace = A21.shape[0]
        self.rows = []
        self.couplings = []
        for cell in range(nc):
            start, stop = A21.indptr[cell * m], A21.indptr[(cell + 1) * m]
            idx = A21.indices[start:stop]
            rows, local_rows = np.unique(idx, return_inverse=True)
            cols = np.repeat(np.arange(m), np.diff(A21.indptr[cell * m:(cell + 1) * m + 1]))
            W = np.zeros((len(rows), m))
            np.add.at(W, (local_rows, cols), A21.data[start:stop])
            self.rows.append(rows)
            self.couplings.append(W)

    @staticmethod
    def _factor(cell, block):
        """
        局所ブロックの LU。各ピボットを、その位置に入れ替わった元の行の最大絶対値と比べ、
        比が LOCAL_PIVOT_RTOL 以下なら特異とみなします（場ごとの大きさの違いに依存しない）。
        """
        lu, piv = sla.lu_factor(block, check_finite=False)
        order = np.arange(len(block))
        for i, p in enumerate(piv):
            order[i], order[p] = order[p], order[i]
        row_scale = np.abs(block).max(axis=1)[order]
        pivots = np.abs(np.diag(lu))
        if not np.all(np.isfinite(lu)) or np.any(pivots <= LOCAL_PIVOT_RTOL * row_scale):
            ratio = np.min(pivots / np.where(row_scale > 0.0, row_scale, 1.0))
            raise SingularLocalBlockError(
                cell, f"セル {cell} の局所ブロックが特異です (ピボット比 {ratio:.3e})。パラメータを確認してください")
        return lu, piv

    def local_solve(self, cell, rhs):
        return sla.lu_solve(self.factors[cell], rhs, check_finite=False)

    def schur(self, A22):
        acc = _Accumulator(A22.shape)
        for cell in range(self.num_cells):
            W = self.couplings[cell]
            if W.size == 0:
                continue
            acc.add(self.rows[cell], self.rows[cell], -W @ self.local_solve(cell, W.T))
        S = (sp.csr_matrix(A22) + acc.tocsr()).tocsr()
        S.sum_duplicates()
        return S

    def reduce(self, b1, b2):
        out = np.array(b2, dtype=float, copy=True)
        m = self.block_size
        for cell in range(self.num_cells):
            W = self.couplings[cell]
            if W.size:
                out[self.rows[cell]] -= W @ self.local_solve(cell, b1[cell * m:(cell + 1) * m])
        return out

    def back(self, b1, xbar):
        m = self.block_size
        x1 = np.empty(self.num_cells * m)
        for cell in range(self.num_cells):
            rhs = b1[cell * m:(cell + 1) * m]
            W = self.couplings[cell]
            if W.size:
                rhs = rhs - W.T @ xbar[self.rows[cell]]
            x1[cell * m:(cell + 1) * m] = self.local_solve(cell, rhs)
        return x1


@dataclass
class CondensedSystem:
    system: object
    matrix: sp.csr_matrix
    rhs: np.ndarray
    offsets: dict
    elimination: _CellwiseElimination
    cell_order: np.ndarray
    trace_order: np.ndarray

    @property
    def size(self):
        return self.matrix.shape[0]

    def is_symmetric(self, rtol=1e-12):
        diff = abs(self.matrix - self.matrix.T)
        return diff.nnz == 0 or diff.max() <= rtol * abs(self.matrix).max()

    def reduce_rhs(self, rhs):
        """全体の右辺から縮約右辺 b̄ を作ります"""
        return self.elimination.reduce(rhs[self.cell_order], rhs[self.trace_order])

    def with_rhs(self, system):
        """行列を共有したまま新しい右辺の系に差し替えます"""
        return CondensedSystem(system, self.matrix, self.reduce_rhs(system.rhs), self.offsets,
                               self.elimination, self.cell_order, self.trace_order)

    def full_vector(self, xbar):
        """トレース解から全体の自由な未知数ベクトルを復元します"""
        x = np.empty(self.system.size)
        x[self.cell_order] = self.elimination.back(self.system.rhs[self.cell_order], xbar)
        x[self.trace_order] = xbar
        return x


def condense(system):
    """BlockSystem を縮約します（Dirichlet 条件は組み込み済み）"""
    cell_order = system.cell_dof_table().ravel()
    trace_order = system.trace_indices()
    A = system.matrix
    A11 = A[cell_order][:, cell_order]
    A21 = A[trace_order][:, cell_order]
    A22 = A[trace_order][:, trace_order]
    block = cell_order.size // system.spaces.mesh.num_cells
    elimination = _CellwiseElimination(A11, A21, block)
    S = elimination.schur(A22)

    offsets = {}
    start = 0
    for name in TRACE_FIELDS:
        n = system.offsets[name][1] - system.offsets[name][0]
        offsets[name] = (start, start + n)
        start += n
    rhs = elimination.reduce(system.rhs[cell_order], system.rhs[trace_order])
    logger.info(f"静的縮約: トレース未知数 {S.shape[0]}, 非零 {S.nnz}")
    return CondensedSystem(system, S, rhs, offsets, elimination, cell_order, trace_order)


def back_substitute(condensed, xbar):
    """トレース解 x̄ からセル場 (u, p_T, z, p) を復元します"""
    x = condensed.full_vector(xbar)
    return {name: x[condensed.system.field_slice(name)] for name in CELL_FIELDS}


# ----------------------------------------------------------------------
# 縮約前処理
# ----------------------------------------------------------------------
@dataclass
class ReducedPreconditioner:
    variant: str
    blocks: dict
    factors: dict
    offsets: dict

    @property
    def size(self):
        return max(stop for _, stop in self.offsets.values())

    def solve(self, r):
        out = np.zeros_like(r, dtype=float)
        for name, (start, stop) in self.offsets.items():
            if stop > start:
                out[start:stop] = self.factors[name].solve(r[start:stop])
        return out

    def matrix(self):
        return sp.block_diag([self.blocks[name] for name in self.offsets], format='csr')


def schur_block(field_blocks):
    """1つの場の Schur 補元 P22 − P21 P11⁻¹ P21ᵀ"""
    if field_blocks.trace is None:
        raise ValueError(f"場 {field_blocks.field} にはトレース成分がありません")
    elimination = _CellwiseElimination(field_blocks.cell, field_blocks.coupling, field_blocks.block_size)
    return elimination.schur(field_blocks.trace)


def reduce_preconditioner(pc):
    """
    前処理ブロックから縮約前処理 S_P / S_P̂ を作ります。
    トレース場ごとのブロック対角で、各ブロックを疎 Cholesky 分解します。
    """
    blocks, factors, offsets = {}, {}, {}
    start = 0
    for cell_field, trace_field in (('u', 'ubar'), ('pT', 'pTbar'), ('p', 'pbar')):
        fb = pc[cell_field]
        S = schur_block(fb)
        n = S.shape[0]
        offsets[trace_field] = (start, start + n)
        start += n
        blocks[trace_field] = S
        if n:
            factors[trace_field] = sparse_spd_factorize(S)
    logger.info(f"縮約前処理を構築しました: {pc.variant}, 大きさ {start}")
    return ReducedPreconditioner(pc.variant, blocks, factors, offsets)
