"""
参照単体上の基底と積分則のテスト
"""

from math import comb, factorial

import numpy as np
import pytest

from fe_basis import (lattice_multi_indices, quadrature, reference_facet_normal, reference_vertices,
                      reference_volume, simplex_basis, trace_points)


def test_quadrature_integrates_monomials():
    """∫_T x^a y^b = a! b! / (a+b+2)!"""
    rule = quadrature(2, 6)
    for a in range(4):
        for b in range(4 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            approx = np.sum(rule.weights * rule.points[:, 0] ** a * rule.points[:, 1] ** b)
            assert abs(approx - exact) < 1e-14


def test_quadrature_3d_volume():
    rule = quadrature(3, 4)
    assert abs(rule.weights.sum() - 1.0 / 6.0) < 1e-15
    x, y, z = rule.points.T
    assert abs(np.sum(rule.weights * x * y * z) - 1.0 / 720.0) < 1e-15


def test_quadrature_rejects_unsupported_degree():
    with pytest.raises(ValueError):
        quadrature(2, 99)
    with pytest.raises(ValueError):
        quadrature(4, 2)


@pytest.mark.parametrize('dim,degree', [(1, 2), (2, 1), (2, 3), (3, 2)])
def test_basis_is_orthonormal(dim, degree):
    basis = simplex_basis(dim, degree)
    assert basis.size == comb(degree + dim, dim)
    rule = quadrature(dim, 2 * degree)
    phi = basis.values(rule.points)
    gram = phi.T @ (rule.weights[:, None] * phi) / reference_volume(dim)
    assert np.allclose(gram, np.eye(basis.size), atol=1e-12)
    # 次数0の基底は定数 1
    assert np.allclose(phi[:, 0], 1.0)


def test_basis_gradients_match_finite_differences():
    basis = simplex_basis(2, 3)
    x = np.array([[0.2, 0.3]])
    h = 1e-5
    grads = basis.gradients(x)[0]
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (basis.values(x + e) - basis.values(x - e))[0] / (2 * h)
        assert np.allclose(grads[:, j], fd, atol=1e-7)


def test_trace_points_lie_on_facet():
    verts = reference_vertices(3)
    facet_pts = quadrature(2, 4).points
    for local in range(4):
        pts = trace_points(3, local, facet_pts)
        normal = reference_facet_normal(3, local)
        on_plane = verts[(local + 1) % 4]
        assert np.allclose((pts - on_plane) @ normal, 0.0, atol=1e-14)


def test_trace_points_rejects_bad_order():
    with pytest.raises(ValueError):
        trace_points(2, 0, np.array([[0.5]]), order=(0, 1))


def test_lattice_multi_indices():
    lattice = lattice_multi_indices(2, 2)
    assert lattice.tolist() == [[2, 0], [1, 1], [0, 2]]
    assert len(lattice_multi_indices(3, 2)) == 6


if __name__ == "__main__":
    test_quadrature_integrates_monomials()
    test_quadrature_3d_volume()
    test_basis_is_orthonormal(2, 3)
    test_basis_gradients_match_finite_differences()
    test_trace_points_lie_on_facet()
    test_lattice_multi_indices()
    print('基底と積分則のテスト成功')
