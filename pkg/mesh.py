"""
単体メッシュ（三角形 / 四面体）

- 構造格子の生成 (unit_box_mesh)
- Gmsh の読み書きと VTK 出力 (meshio)
- セルのアフィン写像、面の法線・面積、セル直径と内接半径
"""

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from math import factorial

import meshio
import numpy as np

from fe_basis import reference_facet_normal

logger = logging.getLogger(__name__)

INTERIOR = -1

# unit_box_mesh の境界タグ: x最小, x最大, y最小, y最大, z最小, z最大
BOX_FACE_TAGS = (1, 2, 3, 4, 5, 6)

MESHIO_CELL_TYPES = {1: 'line', 2: 'triangle', 3: 'tetra'}
MESHIO_CELL_DIMS = {'vertex': 0, 'line': 1, 'triangle': 2, 'tetra': 3}


class GmshFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AffineMap:
    """参照セル -> 物理セル: x = J ξ + x0"""
    jacobian: np.ndarray
    inverse_jacobian: np.ndarray
    det: float
    translation: np.ndarray

    def to_physical(self, ref_points):
        return np.atleast_2d(ref_points) @ self.jacobian.T + self.translation

    def to_reference(self, points):
        return (np.atleast_2d(points) - self.translation) @ self.inverse_jacobian.T


@dataclass(frozen=True)
class FacetGeometry:
    cells: tuple
    local_facets: tuple
    normals: np.ndarray   # (隣接セル数, d) 各セルに対する外向き単位法線
    area: float
    diameters: np.ndarray  # 隣接セルの h_K


class Mesh:
    """
    不変な単体メッシュ。

    面は頂点番号をソートしたタプルで識別し、辞書順に並べます。
    局所面 l はセル頂点 l の対面です。
    """

    def __init__(self, vertices, cells, boundary_markers=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.array(cells, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] not in (2, 3):
            raise ValueError(f"頂点座標の形状が不正です: {self.vertices.shape}")
        self.dim = self.vertices.shape[1]
        if cells.ndim != 2 or cells.shape[1] != self.dim + 1:
            raise ValueError(f"セルは {self.dim + 1} 頂点の単体である必要があります: {cells.shape}")
        self.cells = self._orient(cells)
        self._build_facets()
        self._check_closed_boundary()
        self.facet_tags = np.full(self.num_facets, INTERIOR, dtype=np.int64)
        self.facet_tags[self.boundary_facets] = 0
        if boundary_markers is not None:
            self._apply_markers(boundary_markers)
        for array in (self.vertices, self.cells, self.facets, self.facet_cells,
                      self.facet_local, self.cell_facets, self.facet_tags):
            array.setflags(write=False)

    # ------------------------------------------------------------------
    # 構築
    # ------------------------------------------------------------------
    def _orient(self, cells):
        X = self.vertices[cells]
        dets = np.linalg.det(np.transpose(X[:, 1:, :] - X[:, :1, :], (0, 2, 1)))
        scale = np.max(np.ptp(self.vertices, axis=0)) ** self.dim if len(self.vertices) else 1.0
        degenerate = np.abs(dets) <= 1e-14 * scale
        if np.any(degenerate):
            raise ValueError(f"体積ゼロのセルがあります: {np.flatnonzero(degenerate)[:10].tolist()}")
        flip = dets < 0
        if np.any(flip):
            cells = cells.copy()
            cells[flip, -2], cells[flip, -1] = cells[flip, -1], cells[flip, -2].copy()
        return cells

    def _build_facets(self):
        d = self.dim
        nc = len(self.cells)
        local = np.stack([np.sort(np.delete(self.cells, l, axis=1), axis=1) for l in range(d + 1)], axis=1)
        facets, inverse = np.unique(local.reshape(-1, d), axis=0, return_inverse=True)
        inverse = inverse.ravel()
        counts = np.bincount(inverse, minlength=len(facets))
        if np.any(counts > 2):
            bad = np.flatnonzero(counts > 2)[:10].tolist()
            raise ValueError(f"3つ以上のセルに共有される面があります: {bad}")

        occ_cell = np.repeat(np.arange(nc), d + 1)
        occ_local = np.tile(np.arange(d + 1), nc)
        order = np.argsort(inverse, kind='stable')
        f_sorted = inverse[order]
        first = np.r_[True, f_sorted[1:] != f_sorted[:-1]]
        facet_cells = np.full((len(facets), 2), INTERIOR, dtype=np.int64)
        facet_local = np.full((len(facets), 2), INTERIOR, dtype=np.int64)
        facet_cells[f_sorted[first], 0] = occ_cell[order][first]
        facet_local[f_sorted[first], 0] = occ_local[order][first]
        facet_cells[f_sorted[~first], 1] = occ_cell[order][~first]
        facet_local[f_sorted[~first], 1] = occ_local[order][~first]

        self.facets = facets.astype(np.int64)
        self.cell_facets = inverse.reshape(nc, d + 1).astype(np.int64)
        self.facet_cells = facet_cells
        self.facet_local = facet_local
        self.boundary_facets = np.flatnonzero(facet_cells[:, 1] == INTERIOR)
        self.interior_facets = np.flatnonzero(facet_cells[:, 1] != INTERIOR)

    def _check_closed_boundary(self):
        # 境界面の (d-2) 次元部分要素はちょうど偶数回現れる
        ridges = [tuple(r) for f in self.facets[self.boundary_facets]
                  for r in itertools.combinations(f, self.dim - 1)]
        _, counts = np.unique(np.array(ridges).reshape(len(ridges), -1), axis=0, return_counts=True)
        if np.any(counts % 2):
            raise ValueError("境界面が閉曲面になっていません")

    def _apply_markers(self, markers):
        if callable(markers):
            centroids = self.facet_centroids()
            for f in self.boundary_facets:
                self.facet_tags[f] = int(markers(centroids[f]))
            return
        index = {tuple(int(v) for v in self.facets[f]): f for f in self.boundary_facets}
        for key, tag in markers.items():
            f = index.get(tuple(sorted(int(v) for v in key)))
            if f is None:
                raise ValueError(f"境界面ではない面にタグが指定されました: {key}")
            self.facet_tags[f] = int(tag)

    def with_boundary_markers(self, markers):
        """境界タグを付け直した新しいメッシュ"""
        return Mesh(self.vertices, self.cells, markers)

    # ------------------------------------------------------------------
    # 基本量
    # ------------------------------------------------------------------
    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_facets(self):
        return len(self.facets)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def boundary_markers(self):
        return {int(f): int(self.facet_tags[f]) for f in self.boundary_facets}

    def is_boundary(self, facet):
        return self.facet_cells[facet, 1] == INTERIOR

    def facets_with_marker(self, marker):
        if marker is None:
            return self.boundary_facets
        markers = np.atleast_1d(marker)
        return np.flatnonzero(np.isin(self.facet_tags, markers) & (self.facet_cells[:, 1] == INTERIOR))

    @cached_property
    def jacobians(self):
        X = self.vertices[self.cells]
        return np.ascontiguousarray(np.transpose(X[:, 1:, :] - X[:, :1, :], (0, 2, 1)))

    @cached_property
    def inverse_jacobians(self):
        return np.linalg.inv(self.jacobians)

    @cached_property
    def determinants(self):
        return np.linalg.det(self.jacobians)

    @cached_property
    def cell_volumes(self):
        return self.determinants / factorial(self.dim)

    @cached_property
    def cell_diameters(self):
        """h_K: セルの最長辺"""
        X = self.vertices[self.cells]
        diam = np.zeros(self.num_cells)
        for i, j in itertools.combinations(range(self.dim + 1), 2):
            diam = np.maximum(diam, np.linalg.norm(X[:, i] - X[:, j], axis=1))
        return diam

    @cached_property
    def cell_inradii(self):
        """内接半径 d|K|/|∂K|。ペナルティの長さ h_K に使います"""
        perimeter = self.facet_areas[self.cell_facets].sum(axis=1)
        return self.dim * self.cell_volumes / perimeter

    @cached_property
    def facet_areas(self):
        V = self.vertices[self.facets]
        E = V[:, 1:, :] - V[:, :1, :]
        gram = np.einsum('fid,fjd->fij', E, E)
        return np.sqrt(np.linalg.det(gram)) / factorial(self.dim - 1)

    def facet_centroids(self):
        return self.vertices[self.facets].mean(axis=1)

    def cell_centroids(self):
        return self.vertices[self.cells].mean(axis=1)

    def cell_map(self, cell):
        return AffineMap(self.jacobians[cell], self.inverse_jacobians[cell],
                         float(self.determinants[cell]), self.vertices[self.cells[cell, 0]])

    def outward_normal(self, cell, local_facet):
        n = self.inverse_jacobians[cell].T @ reference_facet_normal(self.dim, local_facet)
        return n / np.linalg.norm(n)

    def facet_vertex_order(self, cell, local_facet):
        """大域面の頂点順（ソート済み）に対応するセル局所頂点番号"""
        cell_vertices = list(self.cells[cell])
        facet = self.facets[self.cell_facets[cell, local_facet]]
        return tuple(cell_vertices.index(v) for v in facet)

    def edges(self):
        pairs = np.concatenate([np.sort(self.cells[:, [i, j]], axis=1)
                                for i, j in itertools.combinations(range(self.dim + 1), 2)])
        return np.unique(pairs, axis=0)

    def __repr__(self):
        return (f"Mesh(dim={self.dim}, cells={self.num_cells}, facets={self.num_facets}, "
                f"boundary_facets={len(self.boundary_facets)})")


def facet_geometry(mesh, facet):
    if not 0 <= facet < mesh.num_facets:
        raise IndexError(f"面番号が範囲外です: {facet}")
    cells = tuple(int(c) for c in mesh.facet_cells[facet] if c != INTERIOR)
    locals_ = tuple(int(l) for l in mesh.facet_local[facet][:len(cells)])
    normals = np.array([mesh.outward_normal(c, l) for c, l in zip(cells, locals_)])
    return FacetGeometry(cells, locals_, normals, float(mesh.facet_areas[facet]),
                         mesh.cell_diameters[list(cells)])


# ----------------------------------------------------------------------
# 構造格子
# ----------------------------------------------------------------------
def box_face_marker(bbox, rtol=1e-10):
    lo, hi = (np.asarray(b, dtype=float) for b in bbox)
    tol = rtol * np.max(hi - lo)

    def marker(x):
        for axis in range(len(lo)):
            if abs(x[axis] - lo[axis]) <= tol:
                return BOX_FACE_TAGS[2 * axis]
            if abs(x[axis] - hi[axis]) <= tol:
                return BOX_FACE_TAGS[2 * axis + 1]
        return 0

    return marker


def unit_box_mesh(dim, n, bbox=None):
    """2D は正方形を対角線で2分割、3D は立方体を Kuhn 分割 (6 四面体)"""
    if dim not in (2, 3):
        raise ValueError(f"dim は 2 または 3 です (dim={dim})")
    if n < 1:
        raise ValueError(f"n は 1 以上が必要です (n={n})")
    if bbox is None:
        bbox = (np.zeros(dim), np.ones(dim))
    lo, hi = (np.asarray(b, dtype=float) for b in bbox)
    if lo.shape != (dim,) or hi.shape != (dim,) or np.any(hi <= lo):
        raise ValueError(f"bbox が不正です: {bbox}")

    axes = [np.linspace(lo[a], hi[a], n + 1) for a in range(dim)]
    grid = np.meshgrid(*axes, indexing='ij')
    vertices = np.column_stack([g.ravel() for g in grid])
    strides = np.array([(n + 1) ** (dim - 1 - a) for a in range(dim)])

    corners = np.array(list(itertools.product(range(n), repeat=dim)))
    base = corners @ strides
    cells = []
    for perm in itertools.permutations(range(dim)):
        path = [np.zeros(dim, dtype=int)]
        for axis in perm:
            step = path[-1].copy()
            step[axis] += 1
            path.append(step)
        offsets = [int(p @ strides) for p in path]
        cells.append(np.column_stack([base + o for o in offsets]))
    cells = np.concatenate(cells)
    # セル順を格子順に揃える
    order = np.argsort(np.repeat(np.arange(len(base))[None, :], factorial(dim), axis=0).ravel(), kind='stable')
    cells = cells[order]
    mesh = Mesh(vertices, cells, box_face_marker((lo, hi)))
    logger.debug(f"構造格子を生成しました: {mesh}")
    return mesh



# ----------------------------------------------------------------------
# Gmsh 入出力と VTK 出力 (meshio)
# ----------------------------------------------------------------------
def import_gmsh(path):
    """
    Gmsh の .msh を読み込みます。境界要素の物理タグ (gmsh:physical) が境界タグになります。
    """
    try:
        raw = meshio.read(str(path), file_format='gmsh')
    except (meshio.ReadError, ValueError, IndexError, KeyError) as e:
        raise GmshFormatError(f"メッシュファイルの解析に失敗しました: {e}")

    physical = raw.cell_data.get('gmsh:physical')
    blocks = {}
    for i, block in enumerate(raw.cells):
        if block.type not in MESHIO_CELL_DIMS:
            raise GmshFormatError(f"未対応の要素タイプです (unsupported element type {block.type})")
        tags = physical[i] if physical is not None else np.zeros(len(block.data), dtype=np.int64)
        dim = MESHIO_CELL_DIMS[block.type]
        data, old = blocks.get(dim, (np.zeros((0, dim + 1), dtype=np.int64), np.zeros(0, dtype=np.int64)))
        blocks[dim] = (np.vstack([data, block.data]), np.concatenate([old, np.asarray(tags, dtype=np.int64)]))

    dim = 3 if 3 in blocks else 2 if 2 in blocks else 0
    if dim == 0:
        raise GmshFormatError("単体セル (三角形/四面体) がありません")
    points = np.asarray(raw.points, dtype=float)
    if dim == 2 and points.shape[1] > 2 and np.any(np.abs(points[:, 2]) > 0.0):
        raise GmshFormatError("mixed dimension: 3次元空間内の三角形メッシュには対応していません")

    cells = blocks[dim][0]
    used = np.unique(cells)
    renumber = np.full(len(points), -1, dtype=np.int64)
    renumber[used] = np.arange(len(used))

    markers = {}
    if dim - 1 in blocks:
        facets, tags = blocks[dim - 1]
        if np.any(renumber[facets] < 0):
            raise GmshFormatError("mixed dimension: セルに属さない境界要素があります")
        markers = {tuple(int(v) for v in facet): int(tag) for facet, tag in zip(renumber[facets], tags)}
    try:
        mesh = Mesh(points[used, :dim], renumber[cells], markers)
    except ValueError as e:
        raise GmshFormatError(f"mixed dimension: {e}")
    logger.info(f"Gmshメッシュを読み込みました: {path} ({mesh})")
    return mesh


def export_gmsh(mesh, path):
    """Gmsh 2.2 ASCII で書き出します（境界面は境界タグを物理タグに持ちます）"""
    d = mesh.dim
    facets = mesh.facets[mesh.boundary_facets]
    tags = mesh.facet_tags[mesh.boundary_facets].astype(np.int64)
    cell_tags = np.full(mesh.num_cells, d + 100, dtype=np.int64)
    out = meshio.Mesh(
        np.column_stack([mesh.vertices, np.zeros((mesh.num_vertices, 3 - d))]),
        [(MESHIO_CELL_TYPES[d - 1], facets), (MESHIO_CELL_TYPES[d], mesh.cells)],
        cell_data={'gmsh:physical': [tags, cell_tags],
                   'gmsh:geometrical': [tags, np.ones(mesh.num_cells, dtype=np.int64)]},
    )
    meshio.write(str(path), out, file_format='gmsh22', binary=False)


def write_vtk(path, mesh, cell_vertex_data):
    """
    セルごとに頂点を複製して不連続場をそのまま出力します。
    cell_vertex_data: 名前 -> (nc, d+1) のスカラー または (nc, d+1, d) のベクトル
    """
    d = mesh.dim
    nc = mesh.num_cells
    points = mesh.vertices[mesh.cells].reshape(-1, d)
    point_data = {}
    for name, values in cell_vertex_data.items():
        values = np.asarray(values, dtype=float)
        if values.shape == (nc, d + 1):
            point_data[name] = values.ravel()
        elif values.shape == (nc, d + 1, d):
            flat = values.reshape(-1, d)
            point_data[name] = np.column_stack([flat, np.zeros((len(flat), 3 - d))])
        else:
            raise ValueError(f"VTK出力データの形状が不正です: {name} {values.shape}")
    out = meshio.Mesh(
        np.column_stack([points, np.zeros((len(points), 3 - d))]),
        [(MESHIO_CELL_TYPES[d], np.arange(nc * (d + 1)).reshape(nc, d + 1))],
        point_data=point_data,
    )
    out.write(str(path), file_format='vtk', binary=False)
    logger.info(f"VTKファイルを書き出しました: {path}")
