"""
自由度マップ・埋め込み・境界値のテスト
"""

import numpy as np
import pytest

from fe_basis import quadrature
from mesh import Mesh, unit_box_mesh
from spaces import (DofMap, build_spaces, facet_physical_points, facet_projection, interpolate, project_cells,
                    set_dirichlet, trace_values)


def two_triangles():
    return Mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])


def quadratic(x):
    x = np.atleast_2d(x)
    return np.column_stack([1 + x[:, 0] ** 2 - x[:, 1], x[:, 0] * x[:, 1]])


def test_counts_on_two_triangles():
    spaces = build_spaces(two_triangles(), 2, 'hdg')
    counts = spaces.counts()
    assert counts['u'] == 24
    assert counts['z'] == 24
    assert counts['p'] == 6
    assert counts['pT'] == 6
    assert counts['pTbar'] == 15
    free = spaces.free_counts()
    assert free['pTbar'] == 15
    assert free['pbar'] == 3
    assert free['ubar'] == 6


def test_edg_counts_on_two_triangles():
    spaces = build_spaces(two_triangles(), 2, 'edg')
    ubar = spaces['ubar']
    # 頂点 4 + 辺の中点 5
    assert ubar.num_nodes == 9
    assert ubar.size == 18
    assert ubar.num_free == 2
    # p̄ は常に HDG
    assert spaces['pbar'].variant == 'hdg'


def test_edg_nodes_are_shared_between_facets():
    mesh = unit_box_mesh(3, 1)
    ubar = DofMap(mesh, 'ubar', 2, 'edg')
    # 頂点 8 + 辺 19
    assert ubar.num_nodes == 8 + len(mesh.edges())
    for f, verts in enumerate(mesh.facets):
        assert np.allclose(ubar.node_coordinates[ubar.facet_nodes[f, 0]], mesh.vertices[verts[0]])


def test_degree_must_be_at_least_two():
    with pytest.raises(ValueError):
        build_spaces(two_triangles(), 1)
    with pytest.raises(ValueError):
        build_spaces(two_triangles(), 2, 'dg')


def test_free_displacement_markers():
    mesh = unit_box_mesh(2, 2)
    spaces = build_spaces(mesh, 2, 'hdg', free_displacement_markers=(4,))
    ubar = spaces['ubar']
    top = mesh.facets_with_marker(4)
    assert not np.any(np.isin(top, ubar.constrained_facets))
    assert ubar.num_free == (len(mesh.interior_facets) + len(top)) * ubar.local_size


def test_edg_embedding_reproduces_polynomials():
    mesh = unit_box_mesh(2, 2)
    edg = DofMap(mesh, 'ubar', 2, 'edg')
    hdg = DofMap(mesh, 'ubar', 2, 'hdg')
    raw = edg.embedding() @ interpolate(edg, quadratic)
    assert np.allclose(raw, interpolate(hdg, quadratic), atol=1e-12)


def test_trace_values_and_projection():
    mesh = unit_box_mesh(2, 1)
    hdg = DofMap(mesh, 'ubar', 2)
    coeffs = interpolate(hdg, quadratic)
    pts = quadrature(1, 4).points
    for f in range(mesh.num_facets):
        x = facet_physical_points(mesh, f, pts)
        assert np.allclose(trace_values(hdg, coeffs, f, pts), quadratic(x), atol=1e-12)


def test_project_cells_is_exact_for_polynomials():
    mesh = unit_box_mesh(2, 2)
    u = DofMap(mesh, 'u', 2)
    coeffs = project_cells(u, quadratic).reshape(mesh.num_cells, 2, -1)
    assert coeffs.shape == (8, 2, 6)
    # 定数基底の係数はセル平均（2次式は辺の中点平均で厳密）
    mids = np.array([np.mean(quadratic(0.5 * (mesh.vertices[c] + mesh.vertices[np.roll(c, 1)])), axis=0)
                     for c in mesh.cells])
    assert np.allclose(coeffs[:, :, 0], mids, atol=1e-12)


def test_set_dirichlet_hdg_and_edg():
    mesh = unit_box_mesh(2, 2)
    spaces = build_spaces(mesh, 2, 'hdg')
    record = set_dirichlet(spaces['ubar'], 1, quadratic)
    assert len(record) == 2 * spaces['ubar'].local_size
    assert spaces['ubar'].constrained[record.dofs].all()

    edg = build_spaces(mesh, 2, 'edg')
    record = set_dirichlet(edg['ubar'], 1, quadratic)
    # x = 0 の辺2本: 頂点3 + 中点2
    assert len(record) == 5 * 2
    zero = set_dirichlet(edg['pbar'], None)
    assert np.all(zero.values == 0)
    assert len(zero) == len(mesh.boundary_facets) * edg['pbar'].local_size


def test_set_dirichlet_rejects_cell_fields():
    spaces = build_spaces(two_triangles(), 2)
    with pytest.raises(ValueError):
        set_dirichlet(spaces['u'], None)
    with pytest.raises(ValueError):
        set_dirichlet(spaces['pTbar'], None)


def test_facet_projection_shape():
    mesh = two_triangles()
    pbar = DofMap(mesh, 'pbar', 2)
    coeffs = facet_projection(pbar, [0, 1], lambda x: np.ones(len(x)))
    assert coeffs.shape == (2, 3)
    assert np.allclose(coeffs[:, 0], 1.0)
    assert np.allclose(coeffs[:, 1:], 0.0, atol=1e-13)


if __name__ == "__main__":
    test_counts_on_two_triangles()
    test_edg_counts_on_two_triangles()
    test_edg_embedding_reproduces_polynomials()
    test_project_cells_is_exact_for_polynomials()
    print('自由度マップのテスト成功')
