"""
自由度マップ（セル空間 V_h, Q_h とトレース空間 V̄_h, Q̄_h, Q̄_h⁰）

セル場の自由度はセルごとに連続した番号を持ち、トレース場の自由度は面ごとに
連続した番号を持ちます。ベクトル場の局所番号は「成分 c × 基底数 + 基底 i」です。

EDG 版では ū を面スケルトン上の連続な ℙ_k 節点自由度で表し、
面ごとの直交基底係数（HDG の係数）への埋め込み行列を持ちます。
"""

import logging
from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.sparse as sp

from fe_basis import lattice_multi_indices, quadrature, reference_volume, simplex_basis

logger = logging.getLogger(__name__)

FIELDS = ('u', 'ubar', 'pT', 'pTbar', 'z', 'p', 'pbar')
CELL_FIELDS = ('u', 'pT', 'z', 'p')
TRACE_FIELDS = ('ubar', 'pTbar', 'pbar')
VECTOR_FIELDS = ('u', 'ubar', 'z')


@dataclass(frozen=True)
class DirichletRecord:
    field: str
    dofs: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.dofs)


def facet_physical_points(mesh, facet, ref_points):
    """面の参照座標（ソート済み頂点順）を物理座標に写します"""
    V = mesh.vertices[mesh.facets[facet]]
    return V[0] + np.atleast_2d(ref_points) @ (V[1:] - V[0])


class DofMap:
    """1つの場の自由度マップ"""

    def __init__(self, mesh, field, degree, variant='hdg', constrained_facets=()):
        if field not in FIELDS:
            raise ValueError(f"未知の場です: {field}")
        self.mesh = mesh
        self.field = field
        self.degree = degree
        self.variant = variant if field == 'ubar' else 'hdg'
        self.components = mesh.dim if field in VECTOR_FIELDS else 1
        self.is_cell = field in CELL_FIELDS

        entity_dim = mesh.dim if self.is_cell else mesh.dim - 1
        self.basis_size = comb(degree + entity_dim, entity_dim)
        self.local_size = self.components * self.basis_size
        num_entities = mesh.num_cells if self.is_cell else mesh.num_facets
        self.entity_dofs = (np.arange(num_entities)[:, None] * self.local_size
                            + np.arange(self.local_size)[None, :])
        self.raw_size = num_entities * self.local_size
        self.constrained_facets = np.asarray(sorted(constrained_facets), dtype=np.int64)

        if self.variant == 'edg':
            self._build_edg_nodes()
            self.size = self.num_nodes * self.components
        else:
            self.size = self.raw_size

        self.constrained = np.zeros(self.size, dtype=bool)
        if len(self.constrained_facets):
            if self.variant == 'edg':
                nodes = np.unique(self.facet_nodes[self.constrained_facets])
                comp = np.arange(self.components)
                self.constrained[(nodes[:, None] * self.components + comp[None, :]).ravel()] = True
            else:
                self.constrained[self.entity_dofs[self.constrained_facets].ravel()] = True
        self.constrained.setflags(write=False)

    def _build_edg_nodes(self):
        mesh = self.mesh
        d = mesh.dim
        k = self.degree
        lattice = lattice_multi_indices(d, k)
        phi = simplex_basis(d - 1, k).values(lattice[:, 1:] / k)
        self._nodal_to_modal = np.linalg.inv(phi)

        node_ids = {}
        facet_nodes = np.empty((mesh.num_facets, len(lattice)), dtype=np.int64)
        coords = []
        for f, verts in enumerate(mesh.facets):
            for a, beta in enumerate(lattice):
                key = tuple((int(verts[i]), int(beta[i])) for i in range(d) if beta[i] > 0)
                node = node_ids.get(key)
                if node is None:
                    node = node_ids[key] = len(node_ids)
                    coords.append(beta @ mesh.vertices[verts] / k)
                facet_nodes[f, a] = node
        self.facet_nodes = facet_nodes
        self.node_coordinates = np.array(coords)
        self.num_nodes = len(node_ids)

    @property
    def kind(self):
        return 'cell' if self.is_cell else 'trace'

    @property
    def free(self):
        return np.flatnonzero(~self.constrained)

    @property
    def constrained_dofs(self):
        return np.flatnonzero(self.constrained)

    @property
    def num_free(self):
        return int(self.size - self.constrained.sum())

    def embedding(self):
        """raw（面ごとの係数）<- 自由度 の行列 (raw_size, size)"""
        if self.variant != 'edg':
            return sp.identity(self.size, format='csr')
        nf, nfb = self.facet_nodes.shape
        c = self.components
        rows, cols, vals = [], [], []
        f_idx = np.arange(nf)[:, None, None]
        j_idx = np.arange(nfb)[None, :, None]
        T = self._nodal_to_modal[None, :, :]
        for comp in range(c):
            r = f_idx * self.local_size + comp * nfb + j_idx
            col = self.facet_nodes[:, None, :] * c + comp
            rows.append(np.broadcast_to(r, (nf, nfb, nfb)).ravel())
            cols.append(np.broadcast_to(col, (nf, nfb, nfb)).ravel())
            vals.append(np.broadcast_to(T, (nf, nfb, nfb)).ravel())
        E = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.raw_size, self.size)).tocsr()
        E.eliminate_zeros()
        return E

    def __repr__(self):
        return (f"DofMap({self.field}, degree={self.degree}, variant={self.variant}, "
                f"size={self.size}, constrained={int(self.constrained.sum())})")


class FunctionSpaces:
    def __init__(self, mesh, degree, variant, maps, free_displacement_markers):
        self.mesh = mesh
        self.degree = degree
        self.variant = variant
        self.maps = maps
        self.free_displacement_markers = tuple(free_displacement_markers)

    def __getitem__(self, field):
        return self.maps[field]

    def __iter__(self):
        return iter(FIELDS)

    def counts(self):
        return {f: self.maps[f].size for f in FIELDS}

    def free_counts(self):
        return {f: self.maps[f].num_free for f in FIELDS}

    def __repr__(self):
        return f"FunctionSpaces(k={self.degree}, variant={self.variant}, free={self.free_counts()})"


def build_spaces(mesh, k, variant='hdg', free_displacement_markers=()):
    """
    7つの場の自由度マップを作ります。

    ū と p̄ は境界面で拘束（free_displacement_markers のタグを持つ面の ū を除く）、
    p̄_T は拘束しません。
    """
    if k < 2:
        raise ValueError(f"多項式次数 k は 2 以上が必要です (k={k})")
    variant = variant.lower()
    if variant not in ('hdg', 'edg'):
        raise ValueError(f"variant は hdg または edg です (variant={variant})")

    boundary = mesh.boundary_facets
    free_u = np.isin(mesh.facet_tags[boundary], list(free_displacement_markers))
    maps = {
        'u': DofMap(mesh, 'u', k),
        'ubar': DofMap(mesh, 'ubar', k, variant, boundary[~free_u]),
        'pT': DofMap(mesh, 'pT', k - 1),
        'pTbar': DofMap(mesh, 'pTbar', k),
        'z': DofMap(mesh, 'z', k),
        'p': DofMap(mesh, 'p', k - 1),
        'pbar': DofMap(mesh, 'pbar', k, 'hdg', boundary),
    }
    spaces = FunctionSpaces(mesh, k, variant, maps, free_displacement_markers)
    logger.info(f"自由度を構築しました: {spaces}")
    return spaces


# ----------------------------------------------------------------------
# 射影と補間
# ----------------------------------------------------------------------
def _as_components(values, npts, components):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape != (npts, components):
        raise ValueError(f"関数値の形状が不正です: {values.shape} (期待: {(npts, components)})")
    return values


def facet_projection(dofmap, facets, func):
    """面ごとの L² 射影係数 (len(facets), local_size)"""
    mesh = dofmap.mesh
    fdim = mesh.dim - 1
    rule = quadrature(fdim, 2 * dofmap.degree + 4)
    chi = simplex_basis(fdim, dofmap.degree).values(rule.points)
    coeffs = np.zeros((len(facets), dofmap.local_size))
    for n, f in enumerate(facets):
        x = facet_physical_points(mesh, f, rule.points)
        g = _as_components(func(x), len(x), dofmap.components)
        coeffs[n] = (chi.T @ (rule.weights[:, None] * g)).T.ravel() / reference_volume(fdim)
    return coeffs


def _node_values(dofmap, nodes, func):
    x = dofmap.node_coordinates[nodes]
    g = _as_components(func(x), len(x), dofmap.components)
    dofs = (nodes[:, None] * dofmap.components + np.arange(dofmap.components)[None, :]).ravel()
    return dofs, g.ravel()


def project_cells(dofmap, func, quad_degree=None):
    """セル場への L² 射影係数ベクトル"""
    mesh = dofmap.mesh
    d = mesh.dim
    rule = quadrature(d, quad_degree or 2 * dofmap.degree + 4)
    phi = simplex_basis(d, dofmap.degree).values(rule.points)
    X = np.einsum('kij,qj->kqi', mesh.jacobians, rule.points) + mesh.vertices[mesh.cells[:, 0]][:, None, :]
    g = _as_components(func(X.reshape(-1, d)), X.shape[0] * X.shape[1], dofmap.components)
    g = g.reshape(mesh.num_cells, len(rule), dofmap.components)
    coeffs = np.einsum('q,qi,kqc->kci', rule.weights, phi, g) / reference_volume(d)
    return coeffs.reshape(-1)


def interpolate(dofmap, func):
    """
    関数を場の自由度ベクトルに写します。
    セル場・HDG トレース: L² 射影、EDG トレース: 節点補間
    """
    if dofmap.is_cell:
        return project_cells(dofmap, func)
    if dofmap.variant == 'edg':
        values = np.zeros(dofmap.size)
        dofs, vals = _node_values(dofmap, np.arange(dofmap.num_nodes), func)
        values[dofs] = vals
        return values
    return facet_projection(dofmap, np.arange(dofmap.mesh.num_facets), func).ravel()


def set_dirichlet(dofmap, marker, boundary_value_function=None):
    """
    拘束された境界自由度に境界値を与えます。

    marker は境界タグ（またはその列）、None はすべての拘束面。
    boundary_value_function が None なら 0 を与えます。
    """
    if dofmap.is_cell or dofmap.field == 'pTbar':
        raise ValueError(f"Dirichlet条件は ū と p̄ にのみ設定できます (field={dofmap.field})")
    mesh = dofmap.mesh
    facets = mesh.facets_with_marker(marker)
    facets = facets[np.isin(facets, dofmap.constrained_facets)]
    if marker is not None and len(facets) == 0:
        logger.warning(f"拘束面がありません: field={dofmap.field}, marker={marker}")

    if boundary_value_function is None:
        if dofmap.variant == 'edg':
            nodes = np.unique(dofmap.facet_nodes[facets]) if len(facets) else np.zeros(0, dtype=np.int64)
            dofs = (nodes[:, None] * dofmap.components + np.arange(dofmap.components)[None, :]).ravel()
        else:
            dofs = dofmap.entity_dofs[facets].ravel()
        return DirichletRecord(dofmap.field, dofs, np.zeros(len(dofs)))

    if dofmap.variant == 'edg':
        nodes = np.unique(dofmap.facet_nodes[facets]) if len(facets) else np.zeros(0, dtype=np.int64)
        dofs, values = _node_values(dofmap, nodes, boundary_value_function)
    else:
        dofs = dofmap.entity_dofs[facets].ravel()
        values = facet_projection(dofmap, facets, boundary_value_function).ravel()
    return DirichletRecord(dofmap.field, dofs, values)


def trace_values(dofmap, coefficients, facet, ref_points):
    """面上の点でトレース場を評価します (npts, components)"""
    raw = coefficients if dofmap.variant != 'edg' else dofmap.embedding() @ coefficients
    fdim = dofmap.mesh.dim - 1
    chi = simplex_basis(fdim, dofmap.degree).values(ref_points)
    local = np.asarray(raw)[dofmap.entity_dofs[facet]].reshape(dofmap.components, dofmap.basis_size)
    return chi @ local.T
