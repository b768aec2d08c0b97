"""
数値実験の定義

- 製造解による h 依存性（メッシュ細分化）
- パラメータ掃引（κ, α, c₀, λ の 54 点、μ = 0.5）
- footing 問題（後退 Euler、時間刻み τ の依存性）
- 縮約系 (S_A, S_P) の一般化固有値
"""

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from assembly import (ModelParams, assemble_biot, assemble_preconditioner, assemble_rhs,
                      assemble_timestep_rhs)
from condense import condense, reduce_preconditioner
from config import Config
from fe_basis import quadrature, reference_vertices, simplex_basis
from krylov import generalized_extreme_eigs, minres
from mesh import unit_box_mesh
from spaces import build_spaces, project_cells, set_dirichlet

logger = logging.getLogger(__name__)

KAPPAS = (1.0, 1e-4, 1e-8)
ALPHAS = (1.0, 1e-4)
C0S = (1.0, 1e-4, 0.0)
LAMBDAS = (1.0, 1e4, 1e8)
SWEEP_MU = 0.5

# (μ, λ, c₀, κ, α) の既定値（メッシュ依存性の実験）
CONVERGENCE_PARAMS = dict(mu=1.0, lam=10.0, c0=0.1, kappa=1e-4, alpha=0.1)

PARAMETER_GRID = tuple(
    dict(mu=SWEEP_MU, lam=lam, alpha=alpha, c0=c0, kappa=kappa)
    for kappa, alpha, c0, lam in itertools.product(KAPPAS, ALPHAS, C0S, LAMBDAS)
)

FOOTING_TAUS = (1.0, 0.25, 0.025, 0.0025, 0.0001)
GAMMA_LOAD, GAMMA_FREE, GAMMA_FIXED = 1, 2, 3


# ----------------------------------------------------------------------
# 製造解
# ----------------------------------------------------------------------
class ManufacturedCase:
    """
    厳密解 u, p から p_T = αp − λ∇·u, z = −κ∇p と
    f = −∇·(με(u)) + ∇p_T, g = c₀p + α∇·u − κΔp を作ります。
    サブクラスは u, grad_u, hess_u, p, grad_p, lap_p を実装します。
    """

    def __init__(self, params):
        self.params = params
        self.dim = params.dim

    def div_u(self, x):
        return np.trace(self.grad_u(x), axis1=1, axis2=2)

    def p_T(self, x):
        prm = self.params
        return prm.alpha * self.p(x) - prm.lam * self.div_u(x)

    def z(self, x):
        return -self.params.kappa * self.grad_p(x)

    def f(self, x):
        prm = self.params
        H = self.hess_u(x)                       # H[n, i, j, k] = ∂_j ∂_k u_i
        lap_u = np.einsum('nijj->ni', H)
        grad_div = np.einsum('niij->nj', H)
        return (-0.5 * prm.mu * (lap_u + grad_div)
                + prm.alpha * self.grad_p(x) - prm.lam * grad_div)

    def g(self, x):
        prm = self.params
        return prm.c0 * self.p(x) + prm.alpha * self.div_u(x) - prm.kappa * self.lap_p(x)

    def residuals(self, x):
        """連続方程式の4行の残差（検証用）"""
        prm = self.params
        H = self.hess_u(x)
        div_eps = 0.5 * (np.einsum('nijj->ni', H) + np.einsum('njij->ni', H))
        grad_pT = prm.alpha * self.grad_p(x) - prm.lam * np.einsum('niij->nj', H)
        r1 = -prm.mu * div_eps + grad_pT - self.f(x)
        r2 = self.p_T(x) - prm.alpha * self.p(x) + prm.lam * self.div_u(x)
        div_z = -prm.kappa * self.lap_p(x)
        r3 = prm.c0 * self.p(x) + prm.alpha / prm.lam * (prm.alpha * self.p(x) - self.p_T(x)) + div_z - self.g(x)
        r4 = self.z(x) / prm.kappa + self.grad_p(x)
        return r1, r2, r3, r4


_TRIG = {
    'sin': (np.sin, lambda t: math.pi * np.cos(t)),
    'cos': (np.cos, lambda t: -math.pi * np.sin(t)),
}


class SineCase(ManufacturedCase):
    """三角関数の積による製造解（2次元 / 3次元）"""

    FACTORS = {
        2: (('sin', 'sin'), ('sin', 'cos')),
        3: (('sin', 'sin', 'sin'), ('sin', 'cos', 'sin'), ('sin', 'cos', 'cos')),
    }

    def __init__(self, params):
        super().__init__(params)
        self.factors = self.FACTORS[self.dim]
        self.direction = np.array([1.0] + [-1.0] * (self.dim - 1))

    def _factor_table(self, x):
        t = math.pi * np.atleast_2d(x)
        val = {name: fn(t) for name, (fn, _) in _TRIG.items()}
        der = {name: d(t) for name, (_, d) in _TRIG.items()}
        return val, der

    def u(self, x):
        val, _ = self._factor_table(x)
        return np.column_stack([
            np.prod([val[name][:, a] for a, name in enumerate(comp)], axis=0) for comp in self.factors
        ])

    def grad_u(self, x):
        val, der = self._factor_table(x)
        n, d = val['sin'].shape
        G = np.zeros((n, d, d))
        for i, comp in enumerate(self.factors):
            for j in range(d):
                G[:, i, j] = np.prod([(der if a == j else val)[name][:, a] for a, name in enumerate(comp)], axis=0)
        return G

    def hess_u(self, x):
        val, der = self._factor_table(x)
        n, d = val['sin'].shape
        H = np.zeros((n, d, d, d))
        for i, comp in enumerate(self.factors):
            for j in range(d):
                for k in range(d):
                    terms = []
                    for a, name in enumerate(comp):
                        if a == j == k:
                            terms.append(-math.pi ** 2 * val[name][:, a])
                        elif a in (j, k):
                            terms.append(der[name][:, a])
                        else:
                            terms.append(val[name][:, a])
                    H[:, i, j, k] = np.prod(terms, axis=0)
        return H

    def p(self, x):
        return np.sin(math.pi * np.atleast_2d(x) @ self.direction)

    def grad_p(self, x):
        return math.pi * np.cos(math.pi * np.atleast_2d(x) @ self.direction)[:, None] * self.direction

    def lap_p(self, x):
        return -math.pi ** 2 * (self.direction @ self.direction) * self.p(x)


class QuadraticCase(ManufacturedCase):
    """u は2次式、p は1次式。k = 2 の離散空間に厳密に含まれます"""

    def __init__(self, params, seed=0):
        super().__init__(params)
        d = self.dim
        rng = np.random.default_rng(seed)
        self.u0 = rng.uniform(-1, 1, d)
        self.G = rng.uniform(-1, 1, (d, d))
        H = rng.uniform(-1, 1, (d, d, d))
        self.H = 0.5 * (H + H.transpose(0, 2, 1))
        self.p0 = rng.uniform(-1, 1)
        self.a = rng.uniform(-1, 1, d)

    def u(self, x):
        x = np.atleast_2d(x)
        return self.u0 + x @ self.G.T + 0.5 * np.einsum('nj,ijk,nk->ni', x, self.H, x)

    def grad_u(self, x):
        x = np.atleast_2d(x)
        return self.G[None] + np.einsum('ijk,nk->nij', self.H, x)

    def hess_u(self, x):
        return np.broadcast_to(self.H, (len(np.atleast_2d(x)),) + self.H.shape)

    def p(self, x):
        return self.p0 + np.atleast_2d(x) @ self.a

    def grad_p(self, x):
        return np.tile(self.a, (len(np.atleast_2d(x)), 1))

    def lap_p(self, x):
        return np.zeros(len(np.atleast_2d(x)))


# ----------------------------------------------------------------------
# 誤差
# ----------------------------------------------------------------------
def _evaluate_cells(mesh, coefficients, degree, components, points):
    phi = simplex_basis(mesh.dim, degree).values(points)
    coeffs = np.asarray(coefficients).reshape(mesh.num_cells, components, -1)
    return np.einsum('qi,kci->kqc', phi, coeffs)


def compute_errors(mesh, fields, exact, degree):
    """
    L² 誤差 ‖u − u_h‖, ‖p − p_h‖（と p_T, z）をセルごとの積分（次数 2k+4）で計算します。
    fields はセル場の係数ベクトル (u, pT, z, p)。
    """
    d = mesh.dim
    rule = quadrature(d, 2 * degree + 4)
    X = np.einsum('kij,qj->kqi', mesh.jacobians, rule.points) + mesh.vertices[mesh.cells[:, 0]][:, None, :]
    flat = X.reshape(-1, d)
    weights = np.outer(mesh.determinants, rule.weights)
    specs = {'u': (degree, d, exact.u), 'z': (degree, d, exact.z),
             'pT': (degree - 1, 1, exact.p_T), 'p': (degree - 1, 1, exact.p)}
    errors = {}
    for name, (deg, comps, func) in specs.items():
        if name not in fields:
            continue
        approx = _evaluate_cells(mesh, fields[name], deg, comps, rule.points)
        ref = np.asarray(func(flat)).reshape(mesh.num_cells, len(rule), comps)
        errors[name] = float(np.sqrt(np.sum(weights[:, :, None] * (ref - approx) ** 2)))
    return errors


def cell_vertex_values(mesh, coefficients, degree, components):
    """VTK 出力用: 各セルの頂点での値 (nc, d+1[, comps])"""
    values = _evaluate_cells(mesh, coefficients, degree, components, reference_vertices(mesh.dim))
    return values[..., 0] if components == 1 else values


# ----------------------------------------------------------------------
# 解法
# ----------------------------------------------------------------------
def solve_condensed(condensed, preconditioner, tol, max_iter=None):
    """縮約系を MINRES で解き、全体の自由な未知数ベクトルを返します"""
    if max_iter is None:
        max_iter = 10 * max(condensed.size, 1)
    xbar, report = minres(condensed.matrix.dot, preconditioner.solve, condensed.rhs, tol, max_iter)
    return condensed.full_vector(xbar), report


def _cell_fields(system, x):
    raw = system.raw_fields(x)
    return {name: raw[name] for name in ('u', 'pT', 'z', 'p')}


@dataclass
class ManufacturedResult:
    dim: int
    level: int
    cells: int
    h: float
    variant: str
    preconditioner: str
    params: ModelParams
    iterations: int
    converged: bool
    relative_residual: float
    wall_time: float
    trace_dofs: int
    errors: dict = field(default_factory=dict)

    @property
    def error_u(self):
        return self.errors.get('u', float('nan'))

    @property
    def error_p(self):
        return self.errors.get('p', float('nan'))


def make_params(dim, degree=None, **values):
    degree = degree or Config.HDG_DEGREE
    return ModelParams(values['mu'], values['lam'], values['alpha'], values['c0'], values['kappa'],
                       values.get('eta'), degree, dim)


def run_manufactured(dim, mesh_level, params, variant='hdg', pc='phat', tol=None, case=None, mesh=None):
    """製造解の問題を組み立て、縮約系を前処理付き MINRES で解きます"""
    tol = tol or Config.default_tolerance(dim)
    mesh = mesh or unit_box_mesh(dim, mesh_level)
    case = case or SineCase(params)
    spaces = build_spaces(mesh, params.k, variant)
    dirichlet = (set_dirichlet(spaces['ubar'], None, case.u), set_dirichlet(spaces['pbar'], None, case.p))
    system = assemble_biot(mesh, spaces, params, case.f, case.g, dirichlet)
    condensed = condense(system)
    reduced = reduce_preconditioner(assemble_preconditioner(mesh, spaces, params, pc))
    x, report = solve_condensed(condensed, reduced, tol)
    errors = compute_errors(mesh, _cell_fields(system, x), case, params.k)
    logger.info(f"製造解 dim={dim} n={mesh_level} セル={mesh.num_cells}: 反復 {report.iterations}, "
                f"誤差 u={errors['u']:.3e} p={errors['p']:.3e}")
    return ManufacturedResult(dim, mesh_level, mesh.num_cells, float(mesh.cell_diameters.max()), variant,
                              reduced.variant, params, report.iterations, report.converged,
                              report.relative_residual, report.wall_time, condensed.size, errors)


def run_convergence(dim, levels=4, base=4, params=None, variant='hdg', pc='phat', tol=None, degree=None):
    """n = base·2^i (i = 0..levels-1) の構造格子で製造解を解きます"""
    params = params or make_params(dim, degree, **CONVERGENCE_PARAMS)
    return [run_manufactured(dim, base * 2 ** i, params, variant, pc, tol) for i in range(levels)]


def _sweep_job(job):
    dim, level, values, variant, pc, tol, degree, mesh = job
    return run_manufactured(dim, level, make_params(dim, degree, **values), variant, pc, tol, mesh=mesh)


def run_param_sweep(dim, level=None, variant='hdg', pc='phat', tol=None, workers=1, degree=None,
                    grid=PARAMETER_GRID, overrides=None, mesh=None):
    """
    (κ, α, c₀, λ) の格子（μ = 0.5）でのMINRES反復回数。
    workers > 1 ならパラメータ点ごとに別プロセスで解きます。
    """
    level = level or (Config.SWEEP_LEVEL_2D if dim == 2 else Config.SWEEP_LEVEL_3D)
    jobs = [(dim, level, {**values, **(overrides or {})}, variant, pc, tol, degree, mesh) for values in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(job) for job in jobs]
    failed = [r for r in results if not r.converged]
    for r in failed:
        logger.warning(f"収束しなかったパラメータ点: {r.params.as_dict()}")
    counts = [r.iterations for r in results]
    logger.info(f"パラメータ掃引: 反復回数 {min(counts)}〜{max(counts)} ({len(results)} 点)")
    return results


# ----------------------------------------------------------------------
# footing 問題
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class FootingCase:
    dim: int
    lower: tuple
    upper: tuple
    load_half_width: float
    E: float
    nu: float
    alpha: float
    c0: float
    kappa_tilde: float
    sigma0: float
    T: float
    level: int
    num_steps: int = None

    def params(self, tau, degree=None):
        return ModelParams.from_material(self.E, self.nu, self.alpha, self.c0, self.kappa_tilde, tau,
                                         self.dim, degree or Config.HDG_DEGREE)

    def steps(self, tau):
        """T/τ（端数は切り上げ）。num_steps が正ならその回数で打ち切ります"""
        total = max(1, math.ceil(self.T / tau - 1e-9))
        return min(total, self.num_steps) if self.num_steps else total

    def boundary_marker(self, x):
        d = self.dim
        tol = 1e-9 * (self.upper[-1] - self.lower[-1])
        if abs(x[d - 1] - self.upper[d - 1]) > tol:
            return GAMMA_FIXED
        if np.all(np.abs(x[:d - 1]) <= self.load_half_width + tol):
            return GAMMA_LOAD
        return GAMMA_FREE

    def mesh(self, level=None):
        box = unit_box_mesh(self.dim, level or self.level, (self.lower, self.upper))
        return box.with_boundary_markers(self.boundary_marker)

    @property
    def traction(self):
        t = np.zeros(self.dim)
        t[-1] = -self.sigma0
        return t


def footing_2d(level=None, num_steps=None, sigma0=1e4):
    return FootingCase(2, (-50.0, 0.0), (50.0, 75.0), 50.0 / 3.0, 3e4, 0.4995, 0.1, 1e-3, 1e-4,
                       sigma0, 50.0, level or Config.FOOTING_LEVEL_2D, num_steps)


def footing_3d(level=None, num_steps=None, sigma0=0.1):
    return FootingCase(3, (-32.0, -32.0, 0.0), (32.0, 32.0, 64.0), 16.0, 3e4, 0.45, 0.5, 0.5, 1e-7,
                       sigma0, 1.0, level or Config.FOOTING_LEVEL_3D, num_steps)


@dataclass
class FootingResult:
    dim: int
    variant: str
    preconditioner: str
    tau: float
    params: ModelParams
    cells: int
    reports: list
    fields: dict = field(repr=False, default_factory=dict)
    mesh: object = field(repr=False, default=None)

    @property
    def steps(self):
        return len(self.reports)

    @property
    def mean_iterations(self):
        return float(np.mean([r.iterations for r in self.reports])) if self.reports else 0.0

    @property
    def max_iterations(self):
        return max((r.iterations for r in self.reports), default=0)

    @property
    def converged(self):
        return all(r.converged for r in self.reports)


def run_footing(case, tau, variant='hdg', pc='phat', tol=None, degree=None, mesh=None):
    """
    後退 Euler で footing 問題を解きます。
    行列・縮約・前処理は τ ごとに一度だけ作り、各ステップでは右辺だけを組み直します。
    mesh を渡す場合は境界タグ 1, 2, 3 がそれぞれ荷重面、自由面、固定面です。
    """
    tol = tol or Config.default_tolerance(case.dim)
    params = case.params(tau, degree)
    mesh = mesh or case.mesh()
    spaces = build_spaces(mesh, params.k, variant, free_displacement_markers=(GAMMA_LOAD, GAMMA_FREE))
    dirichlet = (set_dirichlet(spaces['ubar'], GAMMA_FIXED), set_dirichlet(spaces['pbar'], None))
    traction = {GAMMA_LOAD: case.traction}

    base = assemble_biot(mesh, spaces, params, None, None, dirichlet, traction)
    condensed = condense(base)
    reduced = reduce_preconditioner(assemble_preconditioner(mesh, spaces, params, pc))

    p_prev = np.zeros(spaces['p'].size)
    pT_prev = np.zeros(spaces['pT'].size)
    reports = []
    fields = {}
    for step in range(case.steps(tau)):
        g = assemble_timestep_rhs(params, None, (p_prev, pT_prev), tau)
        system = assemble_rhs(base, g=g, dirichlet=dirichlet, traction=traction)
        step_condensed = condensed.with_rhs(system)
        x, report = solve_condensed(step_condensed, reduced, tol)
        reports.append(report)
        fields = _cell_fields(system, x)
        p_prev, pT_prev = fields['p'], fields['pT']
        logger.info(f"footing τ={tau:g} ステップ {step + 1}: 反復 {report.iterations}")
    return FootingResult(case.dim, variant, reduced.variant, tau, params, mesh.num_cells, reports, fields, mesh)


def footing_vtk_data(result, degree):
    """最終ステップの u, p, p_T をセル頂点で評価します"""
    mesh = result.mesh
    return {
        'u': cell_vertex_values(mesh, result.fields['u'], degree, mesh.dim),
        'p': cell_vertex_values(mesh, result.fields['p'], degree - 1, 1),
        'pT': cell_vertex_values(mesh, result.fields['pT'], degree - 1, 1),
    }


# ----------------------------------------------------------------------
# スペクトル
# ----------------------------------------------------------------------
@dataclass
class SpectrumResult:
    dim: int
    level: int
    variant: str
    preconditioner: str
    params: ModelParams
    size: int
    min_abs: float
    max_abs: float
    minimum: float
    maximum: float
    method: str

    @property
    def condition(self):
        return self.max_abs / self.min_abs


def spectrum_point(dim, level, params, variant='hdg', pc='p', mesh=None):
    mesh = mesh or unit_box_mesh(dim, level)
    spaces = build_spaces(mesh, params.k, variant)
    system = assemble_biot(mesh, spaces, params)
    condensed = condense(system)
    reduced = reduce_preconditioner(assemble_preconditioner(mesh, spaces, params, pc))
    eigs = generalized_extreme_eigs(condensed.matrix, reduced.matrix())
    return SpectrumResult(dim, level, variant, reduced.variant, params, condensed.size,
                          eigs.min_abs, eigs.max_abs, eigs.minimum, eigs.maximum, eigs.method)


def run_spectrum(dim, level=2, variant='hdg', pc='p', degree=None, grid=PARAMETER_GRID, overrides=None,
                 mesh=None):
    """格子の各パラメータ点で (S_A, S_P) の一般化固有値の両端を求めます"""
    mesh = mesh or unit_box_mesh(dim, level)
    results = [spectrum_point(dim, level, make_params(dim, degree, **{**values, **(overrides or {})}),
                              variant, pc, mesh) for values in grid]
    conds = [r.condition for r in results]
    logger.info(f"スペクトル: 条件数比 {min(conds):.3g}〜{max(conds):.3g}")
    return results


def exact_interpolant_fields(mesh, spaces, case):
    """厳密解のセル場への L² 射影（誤差計算の検証用）"""
    return {'u': project_cells(spaces['u'], case.u), 'p': project_cells(spaces['p'], case.p),
            'pT': project_cells(spaces['pT'], case.p_T), 'z': project_cells(spaces['z'], case.z)}
