"""
結果の出力: CSV（1行ごとにパラメータ一式を含む）と Markdown の表
"""

import logging
import os

import pandas as pd

logger = logging.getLogger(__name__)

PARAM_COLUMNS = ('mu', 'lam', 'alpha', 'c0', 'kappa', 'eta', 'k')


def _param_values(params):
    values = params.as_dict()
    return {name: values[name] for name in PARAM_COLUMNS}


def manufactured_rows(results):
    return pd.DataFrame([
        dict(dim=r.dim, level=r.level, cells=r.cells, h=r.h, variant=r.variant, preconditioner=r.preconditioner,
             **_param_values(r.params), trace_dofs=r.trace_dofs, iterations=r.iterations,
             converged=r.converged, relative_residual=r.relative_residual,
             error_u=r.error_u, error_p=r.error_p)
        for r in results])


def footing_rows(results):
    return pd.DataFrame([
        dict(dim=r.dim, cells=r.cells, variant=r.variant, preconditioner=r.preconditioner, tau=r.tau,
             **_param_values(r.params), steps=r.steps, mean_iterations=r.mean_iterations,
             max_iterations=r.max_iterations, converged=r.converged)
        for r in results])


def spectrum_rows(results):
    return pd.DataFrame([
        dict(dim=r.dim, level=r.level, variant=r.variant, preconditioner=r.preconditioner,
             **_param_values(r.params), size=r.size, min_abs=r.min_abs, max_abs=r.max_abs,
             minimum=r.minimum, maximum=r.maximum, condition=r.condition, method=r.method)
        for r in results])


def write_csv(path, frame):
    if frame.empty:
        raise ValueError("出力する行がありません")
    frame.to_csv(path, index=False, float_format='%.10g', lineterminator='\n')
    logger.info(f"CSVを書き出しました: {path} ({len(frame)} 行)")


def write_text(path, text):
    with open(path, 'w') as fh:
        fh.write(text)
    logger.info(f"表を書き出しました: {path}")


def _markdown(frame):
    # セルは整形済みの文字列なので数値への再解釈をしない
    return frame.to_markdown(index=False, disable_numparse=True) + '\n'


def _mark(iterations, converged):
    return f"{iterations}" if converged else f"{iterations}*"


def convergence_table(results):
    frame = pd.DataFrame({
        'n': [str(r.level) for r in results],
        'セル数': [str(r.cells) for r in results],
        'h': [f"{r.h:.4g}" for r in results],
        '反復回数': [_mark(r.iterations, r.converged) for r in results],
        '‖u−u_h‖': [f"{r.error_u:.3e}" for r in results],
        '‖p−p_h‖': [f"{r.error_p:.3e}" for r in results],
    })
    first = results[0]
    title = f"## メッシュ依存性 ({first.dim}次元, {first.variant.upper()}, {first.preconditioner})\n\n"
    return title + _markdown(frame)


def sweep_table(results):
    """κ, α, c₀ を行、λ を列にした反復回数の表（行は結果の順）"""
    keys = ['kappa', 'alpha', 'c0']
    frame = pd.DataFrame([dict(kappa=r.params.kappa, alpha=r.params.alpha, c0=r.params.c0, lam=r.params.lam,
                               mark=_mark(r.iterations, r.converged)) for r in results])
    order = pd.MultiIndex.from_frame(frame[keys].drop_duplicates())
    table = frame.pivot(index=keys, columns='lam', values='mark').reindex(order).fillna('')
    table.columns = [f"λ={lam:g}" for lam in table.columns]
    table = table.reset_index()
    for key in keys:
        table[key] = table[key].map(lambda v: f"{v:g}")
    table = table.rename(columns={'kappa': 'κ', 'alpha': 'α', 'c0': 'c₀'})
    first = results[0]
    title = f"## パラメータ依存性 ({first.dim}次元, {first.variant.upper()}, {first.preconditioner}, セル数 {first.cells})\n\n"
    return title + _markdown(table)


def footing_table(results):
    first = results[0]
    cells = {f"{r.tau:g}": [f"{r.mean_iterations:.1f} ({r.max_iterations})" + ('' if r.converged else '*')]
             for r in results}
    frame = pd.DataFrame({'τ': [f"{first.variant.upper()} ({first.dim}次元)"], **cells})
    title = "## footing 問題: 1ステップあたりの平均反復回数（最大）\n\n"
    return title + _markdown(frame)


def spectrum_table(results):
    frame = pd.DataFrame({
        'κ': [f"{r.params.kappa:g}" for r in results],
        'α': [f"{r.params.alpha:g}" for r in results],
        'c₀': [f"{r.params.c0:g}" for r in results],
        'λ': [f"{r.params.lam:g}" for r in results],
        'λ_min': [f"{r.minimum:.4e}" for r in results],
        'λ_max': [f"{r.maximum:.4e}" for r in results],
        'min abs(λ)': [f"{r.min_abs:.4e}" for r in results],
        '条件数': [f"{r.condition:.4g}" for r in results],
    })
    first = results[0]
    title = f"## 一般化固有値 ({first.dim}次元, n={first.level}, {first.preconditioner})\n\n"
    return title + _markdown(frame)


def write_results(output_dir, rows, table):
    os.makedirs(output_dir, exist_ok=True)
    csv_path = os.path.join(output_dir, 'results.csv')
    table_path = os.path.join(output_dir, 'table.md')
    write_csv(csv_path, rows)
    write_text(table_path, table)
    return csv_path, table_path
