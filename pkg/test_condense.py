"""
静的縮約と縮約前処理のテスト
"""

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from assembly import ModelParams, assemble_biot, assemble_preconditioner, assemble_rhs
from condense import (SingularLocalBlockError, _CellwiseElimination, back_substitute, condense,
                      reduce_preconditioner, schur_block)
from krylov import minres
from mesh import unit_box_mesh
from problems import QuadraticCase
from spaces import build_spaces, set_dirichlet

PARAMS = ModelParams(mu=1.0, lam=10.0, alpha=0.7, c0=0.1, kappa=0.5)


def manufactured_system(variant='hdg', n=2, dim=2, params=PARAMS):
    params = params.with_updates(dim=dim)
    mesh = unit_box_mesh(dim, n)
    case = QuadraticCase(params)
    spaces = build_spaces(mesh, 2, variant)
    dirichlet = (set_dirichlet(spaces['ubar'], None, case.u), set_dirichlet(spaces['pbar'], None, case.p))
    return mesh, spaces, assemble_biot(mesh, spaces, params, case.f, case.g, dirichlet)


@pytest.mark.parametrize('variant', ['hdg', 'edg'])
def test_condensation_matches_monolithic_solve(variant):
    mesh, spaces, system = manufactured_system(variant)
    x = system.dense_solve()
    condensed = condense(system)
    assert condensed.is_symmetric()
    assert condensed.size == sum(spaces.free_counts()[name] for name in ('ubar', 'pTbar', 'pbar'))
    xbar = np.linalg.solve(condensed.matrix.toarray(), condensed.rhs)
    y = condensed.full_vector(xbar)
    assert np.linalg.norm(y - x) <= 1e-9 * np.linalg.norm(x)
    cells = back_substitute(condensed, xbar)
    assert np.allclose(cells['p'], x[system.field_slice('p')], atol=1e-9 * np.abs(x).max())


def test_with_rhs_reuses_matrix():
    mesh, spaces, system = manufactured_system()
    condensed = condense(system)
    other_system = assemble_rhs(system, f=lambda x: np.ones_like(x), g=lambda x: x[:, 0])
    other = condensed.with_rhs(other_system)
    assert other.matrix is condensed.matrix
    xbar = np.linalg.solve(other.matrix.toarray(), other.rhs)
    x = other_system.dense_solve()
    assert np.linalg.norm(other.full_vector(xbar) - x) <= 1e-9 * np.linalg.norm(x)


def test_singular_local_block_is_reported():
    A11 = sp.block_diag([np.eye(2), np.zeros((2, 2))], format='csr')
    A21 = sp.csr_matrix(np.ones((1, 4)))
    with pytest.raises(SingularLocalBlockError) as info:
        _CellwiseElimination(A11, A21, 2)
    assert info.value.cell == 1


def test_cellwise_elimination_rejects_coupled_cells():
    A11 = sp.csr_matrix(np.ones((4, 4)) + 4 * np.eye(4))
    with pytest.raises(ValueError):
        _CellwiseElimination(A11, sp.csr_matrix((1, 4)), 2)


def test_schur_block_matches_dense_formula():
    mesh = unit_box_mesh(2, 2)
    spaces = build_spaces(mesh, 2)
    pc = assemble_preconditioner(mesh, spaces, PARAMS, 'Phat')
    fb = pc['p']
    S = schur_block(fb).toarray()
    A11 = fb.cell.toarray()
    A21 = fb.coupling.toarray()
    expected = fb.trace.toarray() - A21 @ np.linalg.solve(A11, A21.T)
    assert np.allclose(S, expected, atol=1e-10 * np.abs(expected).max())
    with pytest.raises(ValueError):
        schur_block(pc['z'])


@pytest.mark.parametrize('variant', ['P', 'Phat'])
def test_reduced_preconditioner_is_spd(variant):
    mesh, spaces, system = manufactured_system('edg')
    reduced = reduce_preconditioner(assemble_preconditioner(mesh, spaces, system.params, variant))
    condensed = condense(system)
    assert reduced.size == condensed.size
    M = reduced.matrix().toarray()
    assert np.allclose(M, M.T, atol=1e-10 * np.abs(M).max())
    assert np.linalg.eigvalsh(M).min() > 0
    r = np.linspace(-1.0, 1.0, reduced.size)
    assert np.allclose(M @ reduced.solve(r), r, atol=1e-8)


def log_uniform_params(count, seed=11):
    """掃引表の範囲 (μ = 0.5) から対数一様に選んだパラメータ"""
    rng = np.random.default_rng(seed)
    return [ModelParams(mu=0.5, lam=10 ** rng.uniform(0, 8), alpha=10 ** rng.uniform(-4, 0),
                        c0=10 ** rng.uniform(-4, 0), kappa=10 ** rng.uniform(-8, 0))
            for _ in range(count)]


@pytest.mark.parametrize('dim', [2, 3])
def test_condensation_oracle_over_parameter_ranges(dim):
    # n = 1: 2次元は2セル、3次元は6セル
    for params in log_uniform_params(5, seed=dim):
        mesh, spaces, system = manufactured_system(n=1, dim=dim, params=params)
        assert mesh.num_cells == (2 if dim == 2 else 6)
        x = system.dense_solve()
        condensed = condense(system)
        y = condensed.full_vector(np.linalg.solve(condensed.matrix.toarray(), condensed.rhs))
        for name in system.offsets:
            sl = system.field_slice(name)
            if sl.stop == sl.start:
                continue
            scale = max(np.linalg.norm(x[sl]), 1e-12 * np.linalg.norm(x))
            assert np.linalg.norm(y[sl] - x[sl]) <= 1e-9 * scale, (params, name)


def test_nearly_singular_local_block_is_reported():
    nearly_singular = np.array([[1.0, 1.0], [1.0, 1.0 + 4e-16]])
    A11 = sp.block_diag([np.eye(2), nearly_singular], format='csr')
    with pytest.raises(SingularLocalBlockError) as info:
        _CellwiseElimination(A11, sp.csr_matrix(np.ones((1, 4))), 2)
    assert info.value.cell == 1


def test_badly_scaled_local_block_is_accepted():
    A11 = sp.block_diag([np.diag([1e-12, 1e12]), np.array([[1e-8, 1.0], [1.0, 0.0]])], format='csr')
    elimination = _CellwiseElimination(A11, sp.csr_matrix(np.ones((1, 4))), 2)
    assert np.allclose(elimination.local_solve(0, np.array([1e-12, 1e12])), [1.0, 1.0])
    assert np.allclose(elimination.local_solve(1, np.array([1.0, 1.0])), [1.0, 1.0 - 1e-8])


def test_pT_schur_block_is_facet_matrix():
    mesh = unit_box_mesh(2, 2)
    spaces = build_spaces(mesh, 2)
    fb = assemble_preconditioner(mesh, spaces, PARAMS, 'P')['pT']
    assert fb.coupling.nnz == 0
    S = schur_block(fb)
    assert abs(S - fb.trace).max() == 0.0
    # 面ごとに独立: 対角かつ正
    assert abs(S - sp.diags(S.diagonal())).max() == 0.0
    assert S.diagonal().min() > 0


@pytest.mark.parametrize('variant', ['P', 'Phat'])
def test_pressure_schur_energy_is_minimum_over_cells(variant):
    mesh = unit_box_mesh(2, 1)
    spaces = build_spaces(mesh, 2)
    fb = assemble_preconditioner(mesh, spaces, PARAMS, variant)['p']
    full = fb.full().toarray()
    P11, P21 = fb.cell.toarray(), fb.coupling.toarray()
    S = schur_block(fb).toarray()
    rng = np.random.default_rng(5)
    for _ in range(10):
        qbar = rng.standard_normal(S.shape[0])
        q = -np.linalg.solve(P11, P21.T @ qbar)
        v = np.concatenate([q, qbar])
        energy = v @ full @ v
        assert np.isclose(energy, qbar @ S @ qbar, rtol=1e-10)
        w = np.concatenate([q + 1e-3 * rng.standard_normal(q.size), qbar])
        assert w @ full @ w > energy


@pytest.mark.parametrize('field', ['u', 'p'])
def test_full_energy_bounds_schur_energy(field):
    mesh = unit_box_mesh(2, 1)
    spaces = build_spaces(mesh, 2)
    fb = assemble_preconditioner(mesh, spaces, PARAMS, 'Phat')[field]
    full = fb.full().toarray()
    S = schur_block(fb).toarray()
    n_cell = fb.cell.shape[0]
    scale = np.abs(full).max()
    rng = np.random.default_rng(8)
    for _ in range(100):
        v = rng.standard_normal(full.shape[0])
        qbar = v[n_cell:]
        assert v @ full @ v >= qbar @ S @ qbar - 1e-10 * scale * (v @ v)


def test_minres_matches_direct_solve_on_two_cells():
    params = ModelParams(mu=1.0, lam=10.0, alpha=0.1, c0=0.1, kappa=1e-4)
    mesh, spaces, system = manufactured_system(n=1, params=params)
    condensed = condense(system)
    reduced = reduce_preconditioner(assemble_preconditioner(mesh, spaces, params, 'Phat'))
    xbar, report = minres(lambda v: condensed.matrix @ v, reduced.solve, condensed.rhs, 1e-10)
    assert report.converged
    direct = spla.spsolve(condensed.matrix.tocsc(), condensed.rhs)
    assert np.linalg.norm(xbar - direct) <= 1e-7 * np.linalg.norm(direct)


if __name__ == "__main__":
    test_condensation_matches_monolithic_solve('hdg')
    test_condensation_matches_monolithic_solve('edg')
    test_schur_block_matches_dense_formula()
    test_reduced_preconditioner_is_spd('Phat')
    print('静的縮約のテスト成功')
