"""
参照単体上の多項式基底と数値積分

ℙ_k の基底は単項式を参照単体上の（体積で正規化した）L² 内積で
Gram–Schmidt 直交化したものを使います。正規化により次数0の基底は
定数 1 になり、物理セル上の質量行列は |K|·I になります。
"""

import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import roots_jacobi, roots_legendre

logger = logging.getLogger(__name__)

MAX_QUADRATURE_DEGREE = 30


def reference_vertices(dim):
    """参照単体の頂点 (0, e_1, ..., e_dim)"""
    return np.vstack([np.zeros(dim), np.eye(dim)])


def reference_volume(dim):
    return 1.0 / factorial(dim)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (nq, dim) 参照座標
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def quadrature(dim, exactness_degree):
    """参照単体上の崩壊座標（Duffy変換）Gauss–Jacobi 積分則"""
    if dim not in (1, 2, 3):
        raise ValueError(f"積分則は 1〜3 次元のみ対応しています (dim={dim})")
    if exactness_degree < 0 or exactness_degree > MAX_QUADRATURE_DEGREE:
        raise ValueError(f"積分次数 {exactness_degree} は未対応です (最大 {MAX_QUADRATURE_DEGREE})")

    n = max(1, (exactness_degree + 2) // 2)
    s, ws = roots_legendre(n)
    s = 0.5 * (s + 1.0)
    ws = 0.5 * ws
    if dim == 1:
        return QuadratureRule(s[:, None], ws, exactness_degree)

    t, wt = roots_jacobi(n, 1.0, 0.0)
    t = 0.5 * (t + 1.0)
    wt = 0.25 * wt
    if dim == 2:
        u, v = np.meshgrid(s, t, indexing='ij')
        points = np.column_stack([(u * (1.0 - v)).ravel(), v.ravel()])
        weights = np.outer(ws, wt).ravel()
        return QuadratureRule(points, weights, exactness_degree)

    r, wr = roots_jacobi(n, 2.0, 0.0)
    r = 0.5 * (r + 1.0)
    wr = 0.125 * wr
    u, v, w = np.meshgrid(s, t, r, indexing='ij')
    points = np.column_stack([
        (u * (1.0 - v) * (1.0 - w)).ravel(),
        (v * (1.0 - w)).ravel(),
        w.ravel(),
    ])
    weights = np.einsum('i,j,k->ijk', ws, wt, wr).ravel()
    return QuadratureRule(points, weights, exactness_degree)


def monomial_exponents(dim, degree):
    exps = [a for a in itertools.product(range(degree + 1), repeat=dim) if sum(a) <= degree]
    exps.sort(key=lambda a: (sum(a), tuple(-x for x in a)))
    return np.array(exps, dtype=int).reshape(-1, dim)


def _monomials(exponents, points):
    points = np.atleast_2d(points)
    return np.prod(points[:, None, :] ** exponents[None, :, :], axis=2)


def _monomial_gradients(exponents, points):
    points = np.atleast_2d(points)
    npts, dim = points.shape
    grads = np.zeros((npts, len(exponents), dim))
    for j in range(dim):
        lowered = exponents.copy()
        lowered[:, j] -= 1
        coef = exponents[:, j].astype(float)
        grads[:, :, j] = coef[None, :] * np.prod(points[:, None, :] ** np.maximum(lowered, 0)[None, :, :], axis=2)
    return grads


class BasisSet:
    """参照単体上の ℙ_k 直交基底"""

    def __init__(self, dim, degree):
        self.dim = dim
        self.degree = degree
        self.exponents = monomial_exponents(dim, degree)
        rule = quadrature(dim, 2 * degree)
        vander = _monomials(self.exponents, rule.points)
        # 体積で正規化した内積: 定数関数のノルムが 1
        gram = vander.T @ (rule.weights[:, None] / reference_volume(dim) * vander)
        lower = cholesky(gram, lower=True)
        self._coefficients = solve_triangular(lower, np.eye(len(gram)), lower=True).T

    @property
    def size(self):
        return len(self.exponents)

    def values(self, points):
        """(npts, size)"""
        return _monomials(self.exponents, points) @ self._coefficients

    def gradients(self, points):
        """参照座標での勾配 (npts, size, dim)"""
        return np.einsum('pmd,mn->pnd', _monomial_gradients(self.exponents, points), self._coefficients)

    def __repr__(self):
        return f"BasisSet(dim={self.dim}, degree={self.degree}, size={self.size})"


@lru_cache(maxsize=None)
def simplex_basis(dim, degree):
    if dim not in (1, 2, 3):
        raise ValueError(f"基底は 1〜3 次元のみ対応しています (dim={dim})")
    if degree < 0:
        raise ValueError(f"多項式次数は 0 以上が必要です (degree={degree})")
    basis = BasisSet(dim, degree)
    assert basis.size == comb(degree + dim, dim)
    return basis


def facet_vertex_order(cell_dim, local_facet):
    """局所面 local_facet（頂点 local_facet の対面）の既定の頂点順"""
    return tuple(i for i in range(cell_dim + 1) if i != local_facet)


def trace_points(cell_dim, local_facet, facet_points, order=None):
    """
    面の参照座標をセルの参照座標に写します。

    order は面の参照頂点 0..d-1 に対応するセル局所頂点番号です。
    隣接する2セルが同じ大域頂点順を使えば物理座標が一致します。
    """
    if not 0 <= local_facet <= cell_dim:
        raise ValueError(f"局所面番号が不正です (local_facet={local_facet})")
    if order is None:
        order = facet_vertex_order(cell_dim, local_facet)
    if sorted(order) != list(facet_vertex_order(cell_dim, local_facet)):
        raise ValueError(f"面 {local_facet} の頂点順が不正です: {order}")
    verts = reference_vertices(cell_dim)
    base = verts[order[0]]
    edges = verts[list(order[1:])] - base
    facet_points = np.atleast_2d(facet_points)
    return base + facet_points @ edges


def reference_facet_normal(cell_dim, local_facet):
    """参照セルでの外向き単位法線"""
    if local_facet == 0:
        return np.full(cell_dim, 1.0 / np.sqrt(cell_dim))
    normal = np.zeros(cell_dim)
    normal[local_facet - 1] = -1.0
    return normal


def lattice_multi_indices(num_vertices, degree):
    """重心座標の格子点 β (|β| = degree)。面上の節点配置に使います"""
    idx = [b for b in itertools.product(range(degree + 1), repeat=num_vertices) if sum(b) == degree]
    idx.sort(reverse=True)
    return np.array(idx, dtype=int)
