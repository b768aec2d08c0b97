"""
コマンドラインからの実験実行

  python cli.py convergence --dim 2 --levels 4
  python cli.py param-sweep --dim 3 --variant edg --workers 4
  python cli.py footing --dim 2 --taus 1,0.25 --vtk
  python cli.py spectrum --dim 2 --level 2 --pc p

終了コード: 0 正常、1 MINRES が収束しなかった、2 設定またはメッシュのエラー
"""

import argparse
import logging
import os
import sys

import reporting
from condense import SingularLocalBlockError
from config import EXPERIMENTS, PRECONDITIONERS, VARIANTS, Config, RunConfig
from krylov import NotPositiveDefiniteError, PreconditionerBreakdownError
from mesh import GmshFormatError, import_gmsh, write_vtk
from problems import (CONVERGENCE_PARAMS, footing_2d, footing_3d, footing_vtk_data, make_params, run_convergence,
                      run_footing, run_manufactured, run_param_sweep, run_spectrum)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_CONFIG_ERROR = 0, 1, 2


def build_parser():
    parser = argparse.ArgumentParser(prog='hdg-biot', description='HDG/EDG Biot 方程式の前処理付き MINRES 実験')
    parser.add_argument('experiment', choices=EXPERIMENTS)
    parser.add_argument('--config', help='key=value 形式の設定ファイル')
    parser.add_argument('--dim', type=int, choices=(2, 3))
    parser.add_argument('--level', type=int, help='1辺あたりのセル分割数')
    parser.add_argument('--levels', type=int, help='メッシュ依存性の実験で細分化する回数')
    parser.add_argument('--mesh', dest='mesh_file', help='Gmsh メッシュ (.msh)')
    parser.add_argument('--variant', choices=VARIANTS)
    parser.add_argument('--pc', dest='preconditioner', type=str.lower, choices=PRECONDITIONERS)
    parser.add_argument('--tol', dest='tolerance', type=float)
    parser.add_argument('--degree', type=int)
    parser.add_argument('--param', action='append', default=[], metavar='KEY=VALUE',
                        help='物性値の上書き (mu, lam, alpha, c0, kappa, eta)')
    parser.add_argument('--output', dest='output_dir')
    parser.add_argument('--vtk', dest='write_vtk', action='store_true', default=None)
    parser.add_argument('--workers', type=int)
    parser.add_argument('--steps', type=int)
    parser.add_argument('--taus', help='カンマ区切りの時間刻み')
    return parser


def config_from_args(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {name: getattr(args, name) for name in
                 ('experiment', 'dim', 'level', 'levels', 'mesh_file', 'variant', 'preconditioner', 'tolerance',
                  'degree', 'output_dir', 'write_vtk', 'workers', 'steps', 'taus')}
    for item in args.param:
        key, sep, value = item.partition('=')
        if not sep:
            raise ValueError(f"--param は KEY=VALUE 形式で指定してください: {item}")
        overrides[key.strip()] = value.strip()
    return cfg.with_overrides(**overrides).validate()


def _load_mesh(cfg):
    if not cfg.mesh_file:
        return None
    mesh = import_gmsh(cfg.mesh_file)
    if mesh.dim != cfg.dim:
        raise ValueError(f"メッシュの次元 {mesh.dim} が dim={cfg.dim} と一致しません")
    return mesh


def run_experiment(cfg):
    """実験を実行して (結果, CSV 行, Markdown 表) を返します"""
    mesh = _load_mesh(cfg)
    tol = cfg.effective_tolerance
    if cfg.experiment == 'convergence':
        params = make_params(cfg.dim, cfg.degree, **{**CONVERGENCE_PARAMS, **cfg.params})
        if mesh is not None:
            results = [run_manufactured(cfg.dim, 0, params, cfg.variant, cfg.preconditioner, tol, mesh=mesh)]
        else:
            results = run_convergence(cfg.dim, cfg.levels, cfg.resolved_level, params, cfg.variant,
                                      cfg.preconditioner, tol)
        return results, reporting.manufactured_rows(results), reporting.convergence_table(results)

    if cfg.experiment == 'param-sweep':
        results = run_param_sweep(cfg.dim, cfg.resolved_level, cfg.variant, cfg.preconditioner, tol, cfg.workers,
                                  cfg.degree, overrides=cfg.params, mesh=mesh)
        return results, reporting.manufactured_rows(results), reporting.sweep_table(results)

    if cfg.experiment == 'footing':
        if cfg.params:
            logger.warning(f"footing 問題では物性値の上書きは無視されます: {cfg.params}")
        make_case = footing_2d if cfg.dim == 2 else footing_3d
        case = make_case(cfg.resolved_level, cfg.steps or None)
        results = [run_footing(case, tau, cfg.variant, cfg.preconditioner, tol, cfg.degree, mesh=mesh)
                   for tau in cfg.taus]
        return results, reporting.footing_rows(results), reporting.footing_table(results)

    results = run_spectrum(cfg.dim, cfg.resolved_level, cfg.variant, cfg.preconditioner, cfg.degree,
                           overrides=cfg.params, mesh=mesh)
    return results, reporting.spectrum_rows(results), reporting.spectrum_table(results)


def main(argv=None):
    logging.basicConfig(level=Config.LOG_LEVEL, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    args = build_parser().parse_args(argv)
    try:
        Config.validate_config()
        cfg = config_from_args(args)
        logger.info(f"実験開始: {cfg.experiment} dim={cfg.dim} variant={cfg.variant} pc={cfg.preconditioner}")
        results, rows, table = run_experiment(cfg)
    except (GmshFormatError, OSError) as e:
        logger.error(f"メッシュまたはファイルの読み込みに失敗しました: {e}")
        return EXIT_CONFIG_ERROR
    except (SingularLocalBlockError, NotPositiveDefiniteError, PreconditionerBreakdownError) as e:
        logger.error(f"離散系または前処理が不正です: {e}")
        return EXIT_CONFIG_ERROR
    except ValueError as e:
        logger.error(f"設定エラー: {e}")
        return EXIT_CONFIG_ERROR

    reporting.write_results(cfg.output_dir, rows, table)
    if cfg.write_vtk:
        if cfg.experiment == 'footing':
            final = results[-1]
            path = os.path.join(cfg.output_dir, 'fields.vtk')
            write_vtk(path, final.mesh, footing_vtk_data(final, final.params.k))
        else:
            logger.warning("VTK 出力は footing 問題のみ対応しています")
    print(table)

    failed = [r for r in results if not getattr(r, 'converged', True)]
    for r in failed:
        logger.error(f"収束しませんでした: {r.params}")
    if failed:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
