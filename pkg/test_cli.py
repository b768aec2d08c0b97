"""
コマンドラインと結果出力のテスト
"""

from types import SimpleNamespace

import meshio
import pandas as pd
import pytest

import reporting
from assembly import ModelParams
from cli import EXIT_CONFIG_ERROR, EXIT_OK, build_parser, config_from_args, main
from problems import PARAMETER_GRID


def fake_result(lam=1.0, kappa=1.0, alpha=1.0, c0=1.0, iterations=10, converged=True):
    params = ModelParams(0.5, lam, alpha, c0, kappa)
    return SimpleNamespace(dim=2, level=4, cells=32, h=0.35355, variant='hdg', preconditioner='Phat', params=params,
                           trace_dofs=100, iterations=iterations, converged=converged, relative_residual=1e-9,
                           wall_time=0.5, error_u=1e-3, error_p=2e-3)


def table_cells(table):
    """Markdown の表を行ごとのセル文字列のリストに分解します"""
    lines = [line for line in table.splitlines() if line.startswith('|')]
    return [[cell.strip() for cell in line.strip().strip('|').split('|')] for line in lines]


def test_sweep_table_layout():
    results = [fake_result(g['lam'], g['kappa'], g['alpha'], g['c0'], iterations=i)
               for i, g in enumerate(PARAMETER_GRID)]
    rows = table_cells(reporting.sweep_table(results))
    # ヘッダ + 区切り + (κ, α, c₀) の 18 行
    assert len(rows) == 2 + 18
    assert rows[0] == ['κ', 'α', 'c₀', 'λ=1', 'λ=10000', 'λ=1e+08']
    assert rows[2] == ['1', '1', '1', '0', '1', '2']


def test_unconverged_entries_are_marked():
    table = reporting.convergence_table([fake_result(iterations=500, converged=False)])
    assert '500*' in table
    assert table_cells(table)[2][3] == '500*'


def test_csv_is_deterministic(tmp_path):
    rows = reporting.manufactured_rows([fake_result(), fake_result(lam=1e8)])
    assert 'wall_time' not in rows.columns
    first, second = tmp_path / 'a.csv', tmp_path / 'b.csv'
    reporting.write_csv(first, rows)
    reporting.write_csv(second, rows)
    assert first.read_bytes() == second.read_bytes()
    loaded = pd.read_csv(first)
    for name in ('mu', 'lam', 'alpha', 'c0', 'kappa', 'eta', 'iterations'):
        assert name in loaded.columns
    assert list(loaded['lam']) == [1.0, 1e8]
    with pytest.raises(ValueError):
        reporting.write_csv(first, rows.iloc[:0])


def test_parser_options():
    args = build_parser().parse_args(['footing', '--dim', '3', '--pc', 'P', '--taus', '1,0.1',
                                      '--param', 'lam=1e4', '--vtk'])
    cfg = config_from_args(args)
    assert cfg.experiment == 'footing'
    assert cfg.preconditioner == 'p'
    assert cfg.taus == (1.0, 0.1)
    assert cfg.params == {'lam': 1e4}
    assert cfg.write_vtk is True


def test_config_file_with_command_line_override(tmp_path):
    path = tmp_path / 'run.env'
    path.write_text('DIM=3\nVARIANT=edg\n')
    args = build_parser().parse_args(['spectrum', '--config', str(path), '--variant', 'hdg'])
    cfg = config_from_args(args)
    assert cfg.dim == 3
    assert cfg.variant == 'hdg'


def test_main_convergence_writes_outputs(tmp_path):
    code = main(['convergence', '--dim', '2', '--level', '2', '--levels', '1', '--output', str(tmp_path)])
    assert code == EXIT_OK
    assert (tmp_path / 'results.csv').exists()
    assert 'メッシュ依存性' in (tmp_path / 'table.md').read_text()


def test_main_footing_writes_vtk(tmp_path):
    code = main(['footing', '--level', '3', '--steps', '1', '--taus', '1', '--vtk', '--output', str(tmp_path)])
    assert code == EXIT_OK
    fields = meshio.read(str(tmp_path / 'fields.vtk'))
    assert {'u', 'p', 'pT'} <= set(fields.point_data)


def test_main_reports_configuration_errors(tmp_path):
    assert main(['convergence', '--param', 'lam', '--output', str(tmp_path)]) == EXIT_CONFIG_ERROR
    assert main(['convergence', '--param', 'alpha=2', '--level', '2', '--levels', '1',
                 '--output', str(tmp_path)]) == EXIT_CONFIG_ERROR
    assert main(['convergence', '--mesh', str(tmp_path / 'missing.msh')]) == EXIT_CONFIG_ERROR
    broken = tmp_path / 'broken.msh'
    broken.write_text('$MeshFormat\n2.2 0 8\n$EndMeshFormat\n')
    assert main(['spectrum', '--mesh', str(broken)]) == EXIT_CONFIG_ERROR


if __name__ == "__main__":
    test_sweep_table_layout()
    test_parser_options()
    print('コマンドラインのテスト成功')
