"""
要素行列の計算と大域ブロック行列の組み立て

双線形形式（セルごとに ∂K 上の面積分を足し込みます）:
  d_h, b_h, κ⁻¹ 質量, 圧力連成項, 境界連成項 −⟨q̄_T, ū·n⟩ − ⟨p̄_T, v̄·n⟩ (∂Ω 上)
前処理用:
  P  : (·,·)_v, (·,·)_{q_T}, (·,·)_w, (·,·)_q
  P̂ : d_h, (·,·)_{q_T}, (·,·)_w, ã_h
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from math import factorial

import numpy as np
import scipy.sparse as sp

from fe_basis import quadrature, simplex_basis, trace_points
from krylov import dense_solve
from spaces import CELL_FIELDS, FIELDS, TRACE_FIELDS, facet_projection, project_cells

logger = logging.getLogger(__name__)

ACCUMULATOR_CHUNK = 4_000_000


@dataclass(frozen=True)
class ModelParams:
    mu: float
    lam: float
    alpha: float
    c0: float
    kappa: float
    eta: float = None
    k: int = 2
    dim: int = 2

    def __post_init__(self):
        if self.eta is None:
            object.__setattr__(self, 'eta', float(2 * self.dim * self.k ** 2))
        if self.mu <= 0 or self.lam <= 0:
            raise ValueError(f"mu と lam は正の値が必要です (mu={self.mu}, lam={self.lam})")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha は (0, 1] の範囲が必要です (alpha={self.alpha})")
        if self.c0 < 0:
            raise ValueError(f"c0 は 0 以上が必要です (c0={self.c0})")
        if self.kappa <= 0:
            raise ValueError(f"kappa は正の値が必要です (kappa={self.kappa})")
        if self.eta <= 1:
            raise ValueError(f"eta は 1 より大きい値が必要です (eta={self.eta})")
        if self.dim not in (2, 3) or self.k < 2:
            raise ValueError(f"dim={self.dim}, k={self.k} は未対応です")
        if self.mu / self.lam > 10:
            logger.warning(f"mu/lam = {self.mu / self.lam:.3g} > 10 です（解析の前提外）")

    @classmethod
    def from_material(cls, E, nu, alpha, c0, kappa_tilde, tau, dim, k=2, eta=None):
        """ヤング率 E とポアソン比 nu から (mu = 2 mu_tilde, kappa = tau kappa_tilde)"""
        if not 0.0 < nu < 0.5:
            raise ValueError(f"nu は (0, 0.5) の範囲が必要です (nu={nu})")
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu_tilde = E / (2 * (1 + nu))
        return cls(2 * mu_tilde, lam, alpha, c0, tau * kappa_tilde, eta, k, dim)

    @property
    def reaction(self):
        return self.c0 + self.alpha ** 2 / self.lam

    def with_updates(self, **changes):
        if 'eta' not in changes and any(key in changes for key in ('k', 'dim')):
            changes['eta'] = None
        return replace(self, **changes)

    def as_dict(self):
        return asdict(self)


# ----------------------------------------------------------------------
# 要素計算
# ----------------------------------------------------------------------
def _vectorize(phi, d):
    nq, nb = phi.shape
    V = np.zeros((nq, d * nb, d))
    for c in range(d):
        V[:, c * nb:(c + 1) * nb, c] = phi
    return V


def _strain(G, d):
    nq, nb, _ = G.shape
    E = np.zeros((nq, d * nb, d, d))
    for c in range(d):
        E[:, c * nb:(c + 1) * nb, c, :] += 0.5 * G
        E[:, c * nb:(c + 1) * nb, :, c] += 0.5 * G
    return E


def _divergence(G, d):
    nq, nb, _ = G.shape
    D = np.zeros((nq, d * nb))
    for c in range(d):
        D[:, c * nb:(c + 1) * nb] = G[:, :, c]
    return D


@dataclass
class FacetData:
    local: int
    facet: int
    normal: np.ndarray
    area: float
    weights: np.ndarray
    tables: dict


@dataclass
class CellData:
    cell: int
    inverse_jacobian: np.ndarray
    volume: float
    length: float  # ペナルティの h_K (内接半径)
    weights: np.ndarray
    facets: list


class ElementAssembler:
    """参照要素の表を前計算し、セルごとの密な要素行列を返します"""

    def __init__(self, mesh, params):
        self.mesh = mesh
        self.params = params
        d = mesh.dim
        k = params.k
        self.dim = d
        self.basis_k = simplex_basis(d, k)
        self.basis_m = simplex_basis(d, k - 1)
        self.basis_f = simplex_basis(d - 1, k)
        self.volume_rule = quadrature(d, 2 * k + 2)
        self.facet_rule = quadrature(d - 1, 2 * k + 2)
        pts = self.volume_rule.points
        self.phi_k = self.basis_k.values(pts)
        self.dphi_k = self.basis_k.gradients(pts)
        self.phi_m = self.basis_m.values(pts)
        self.dphi_m = self.basis_m.gradients(pts)
        self.chi = self.basis_f.values(self.facet_rule.points)
        self._facet_tables = {}

        self.nU = d * self.basis_k.size
        self.nQ = self.basis_m.size
        self.nfb = self.basis_f.size
        self.nUb = d * self.nfb

    def facet_tables(self, local, order):
        key = (local, order)
        tables = self._facet_tables.get(key)
        if tables is None:
            pts = trace_points(self.dim, local, self.facet_rule.points, order)
            tables = {
                'phi_k': self.basis_k.values(pts),
                'dphi_k': self.basis_k.gradients(pts),
                'phi_m': self.basis_m.values(pts),
                'dphi_m': self.basis_m.gradients(pts),
            }
            self._facet_tables[key] = tables
        return tables

    def cell_data(self, cell):
        mesh = self.mesh
        d = self.dim
        det = mesh.determinants[cell]
        facets = []
        for local in range(d + 1):
            f = int(mesh.cell_facets[cell, local])
            area = float(mesh.facet_areas[f])
            facets.append(FacetData(
                local, f, mesh.outward_normal(cell, local), area,
                self.facet_rule.weights * area * factorial(d - 1),
                self.facet_tables(local, mesh.facet_vertex_order(cell, local)),
            ))
        return CellData(cell, mesh.inverse_jacobians[cell], float(mesh.cell_volumes[cell]),
                        float(mesh.cell_inradii[cell]), self.volume_rule.weights * det, facets)

    def element_dh(self, data, consistency=True):
        """
        d_h の要素行列 [u | ū_0 | ... | ū_d]。
        consistency=False で (·,·)_v（対称化項なし）になります。
        """
        d = self.dim
        mu = self.params.mu
        nU, nUb = self.nU, self.nUb
        size = nU + (d + 1) * nUb
        M = np.zeros((size, size))
        G = self.dphi_k @ data.inverse_jacobian
        E = _strain(G, d)
        M[:nU, :nU] = mu * np.einsum('q,qaij,qbij->ab', data.weights, E, E)
        B = _vectorize(self.chi, d)
        penalty = self.params.eta * mu / data.length
        for fd in data.facets:
            sl = slice(nU + fd.local * nUb, nU + (fd.local + 1) * nUb)
            w = fd.weights
            U = _vectorize(fd.tables['phi_k'], d)
            UU = np.einsum('q,qai,qbi->ab', w, U, U)
            UB = np.einsum('q,qai,qbi->ab', w, U, B)
            BB = np.einsum('q,qai,qbi->ab', w, B, B)
            M[:nU, :nU] += penalty * UU
            M[:nU, sl] -= penalty * UB
            M[sl, :nU] -= penalty * UB.T
            M[sl, sl] += penalty * BB
            if consistency:
                Ef = _strain(fd.tables['dphi_k'] @ data.inverse_jacobian, d)
                T = mu * np.einsum('qaij,j->qai', Ef, fd.normal)
                TU = np.einsum('q,qai,qbi->ab', w, T, U)
                TB = np.einsum('q,qai,qbi->ab', w, T, B)
                M[:nU, :nU] -= TU + TU.T
                M[:nU, sl] += TB
                M[sl, :nU] += TB.T
        return M

    def element_bh(self, data):
        """b_h の要素行列: 行 [q | q̄_0 | ... | q̄_d], 列 v"""
        d = self.dim
        nQ, nfb = self.nQ, self.nfb
        M = np.zeros((nQ + (d + 1) * nfb, self.nU))
        D = _divergence(self.dphi_k @ data.inverse_jacobian, d)
        M[:nQ] = -np.einsum('q,qi,qa->ia', data.weights, self.phi_m, D)
        for fd in data.facets:
            Un = np.einsum('qai,i->qa', _vectorize(fd.tables['phi_k'], d), fd.normal)
            M[nQ + fd.local * nfb:nQ + (fd.local + 1) * nfb] = np.einsum('q,qj,qa->ja', fd.weights, self.chi, Un)
        return M

    def element_pressure(self, data, consistency=True):
        """
        圧力ブロック [p | p̄_0 | ... | p̄_d]。
        consistency=True で ã_h, False で (·,·)_q。
        """
        d = self.dim
        kappa = self.params.kappa
        nQ, nfb = self.nQ, self.nfb
        size = nQ + (d + 1) * nfb
        M = np.zeros((size, size))
        G = self.dphi_m @ data.inverse_jacobian
        M[:nQ, :nQ] = (self.params.reaction * data.volume * np.eye(nQ)
                       + kappa * np.einsum('q,qid,qjd->ij', data.weights, G, G))
        penalty = kappa * self.params.eta / data.length
        C = self.chi
        for fd in data.facets:
            sl = slice(nQ + fd.local * nfb, nQ + (fd.local + 1) * nfb)
            w = fd.weights
            P = fd.tables['phi_m']
            PP = np.einsum('q,qi,qj->ij', w, P, P)
            PC = np.einsum('q,qi,qj->ij', w, P, C)
            CC = np.einsum('q,qi,qj->ij', w, C, C)
            M[:nQ, :nQ] += penalty * PP
            M[:nQ, sl] -= penalty * PC
            M[sl, :nQ] -= penalty * PC.T
            M[sl, sl] += penalty * CC
            if consistency:
                Gn = (fd.tables['dphi_m'] @ data.inverse_jacobian) @ fd.normal
                GP = np.einsum('q,qi,qj->ij', w, Gn, P)
                GC = np.einsum('q,qi,qj->ij', w, Gn, C)
                M[:nQ, :nQ] -= kappa * (GP + GP.T)
                M[:nQ, sl] += kappa * GC
                M[sl, :nQ] += kappa * GC.T
        return M

    def element_boundary_coupling(self, fd):
        """−⟨q̄_T, ū·n⟩ の境界面ブロック (p̄_T 行, ū 列)"""
        blocks = [-fd.area * n_c * np.eye(self.nfb) for n_c in fd.normal]
        return np.hstack(blocks)


# ----------------------------------------------------------------------
# 大域組み立て
# ----------------------------------------------------------------------
class _Accumulator:
    """COO で要素を溜め、一定量ごとに CSR に足し込みます"""

    def __init__(self, shape):
        self.shape = shape
        self.matrix = sp.csr_matrix(shape)
        self._rows, self._cols, self._vals = [], [], []
        self._count = 0

    def add(self, rows, cols, block, symmetric=False):
        mask = block != 0
        if not mask.any():
            return
        r = np.broadcast_to(rows[:, None], block.shape)[mask]
        c = np.broadcast_to(cols[None, :], block.shape)[mask]
        v = block[mask]
        self._push(r, c, v)
        if symmetric:
            self._push(c, r, v)

    def _push(self, r, c, v):
        self._rows.append(r)
        self._cols.append(c)
        self._vals.append(v)
        self._count += len(v)
        if self._count > ACCUMULATOR_CHUNK:
            self._flush()

    def _flush(self):
        if not self._vals:
            return
        chunk = sp.coo_matrix((np.concatenate(self._vals), (np.concatenate(self._rows), np.concatenate(self._cols))),
                              shape=self.shape).tocsr()
        self.matrix = self.matrix + chunk
        self._rows, self._cols, self._vals = [], [], []
        self._count = 0

    def tocsr(self):
        self._flush()
        self.matrix.sum_duplicates()
        return self.matrix


def _raw_offsets(spaces, fields):
    offsets = {}
    start = 0
    for name in fields:
        offsets[name] = start
        start += spaces[name].raw_size
    return offsets, start


def _transforms(spaces, fields):
    """raw <- 自由な自由度 / 拘束された自由度 の変換行列"""
    free_blocks, con_blocks = [], []
    for name in fields:
        dofmap = spaces[name]
        E = dofmap.embedding().tocsc()
        free_blocks.append(E[:, dofmap.free])
        con_blocks.append(E[:, dofmap.constrained_dofs])
    return sp.block_diag(free_blocks, format='csr'), sp.block_diag(con_blocks, format='csr')


def _check_inputs(mesh, spaces, params):
    if spaces.mesh is not mesh:
        raise ValueError("spaces は同じメッシュ上で構築する必要があります")
    if params.dim != mesh.dim:
        raise ValueError(f"次元が一致しません (params.dim={params.dim}, mesh.dim={mesh.dim})")
    if params.k != spaces.degree:
        raise ValueError(f"次数が一致しません (params.k={params.k}, spaces.degree={spaces.degree})")


def _facet_dofs(dofmap, data):
    return np.concatenate([dofmap.entity_dofs[fd.facet] for fd in data.facets])


def assemble_operator_raw(mesh, spaces, params, assembler=None):
    """a_h（境界連成項を含む）を面ごとの係数空間で組み立てます"""
    _check_inputs(mesh, spaces, params)
    assembler = assembler or ElementAssembler(mesh, params)
    offsets, total = _raw_offsets(spaces, FIELDS)
    acc = _Accumulator((total, total))
    m = {name: spaces[name] for name in FIELDS}
    nQ = assembler.nQ
    p = params
    for cell in range(mesh.num_cells):
        data = assembler.cell_data(cell)
        u = offsets['u'] + m['u'].entity_dofs[cell]
        ubar = offsets['ubar'] + _facet_dofs(m['ubar'], data)
        pT = offsets['pT'] + m['pT'].entity_dofs[cell]
        pTbar = offsets['pTbar'] + _facet_dofs(m['pTbar'], data)
        z = offsets['z'] + m['z'].entity_dofs[cell]
        pc = offsets['p'] + m['p'].entity_dofs[cell]
        pbar = offsets['pbar'] + _facet_dofs(m['pbar'], data)

        Dh = assembler.element_dh(data)
        uu = np.concatenate([u, ubar])
        acc.add(uu, uu, Dh)

        Bh = assembler.element_bh(data)
        acc.add(np.concatenate([pT, pTbar]), u, Bh, symmetric=True)
        acc.add(np.concatenate([pc, pbar]), z, Bh, symmetric=True)

        vol = data.volume
        acc.add(z, z, (vol / p.kappa) * np.eye(len(z)))
        I = vol * np.eye(nQ)
        acc.add(pc, pc, -p.reaction * I)
        acc.add(pc, pT, (p.alpha / p.lam) * I, symmetric=True)
        acc.add(pT, pT, (-1.0 / p.lam) * I)

        for fd in data.facets:
            if mesh.is_boundary(fd.facet):
                C = assembler.element_boundary_coupling(fd)
                acc.add(offsets['pTbar'] + m['pTbar'].entity_dofs[fd.facet],
                        offsets['ubar'] + m['ubar'].entity_dofs[fd.facet], C, symmetric=True)
    return acc.tocsr()


def assemble_load_raw(spaces, f=None, g=None, traction=None):
    """
    右辺 (f, v) − (g, q) + ⟨t, v̄⟩ を面ごとの係数空間で組み立てます。
    g は関数または Q_h の係数ベクトル、traction は 境界タグ -> t(x) または定数ベクトル。
    """
    mesh = spaces.mesh
    offsets, total = _raw_offsets(spaces, FIELDS)
    b = np.zeros(total)
    if f is not None:
        um = spaces['u']
        vol = np.repeat(mesh.cell_volumes, um.local_size)
        b[offsets['u']:offsets['u'] + um.raw_size] += vol * project_cells(um, f)
    if g is not None:
        pm = spaces['p']
        vol = np.repeat(mesh.cell_volumes, pm.local_size)
        coeffs = project_cells(pm, g) if callable(g) else np.asarray(g, dtype=float)
        if coeffs.shape != (pm.raw_size,):
            raise ValueError(f"g の係数ベクトルの長さが不正です: {coeffs.shape} (期待: {pm.raw_size})")
        b[offsets['p']:offsets['p'] + pm.raw_size] -= vol * coeffs
    for marker, t in (traction or {}).items():
        um = spaces['ubar']
        facets = mesh.facets_with_marker(marker)
        if np.any(np.isin(facets, um.constrained_facets)):
            raise ValueError(f"表面力は変位が自由な境界にのみ与えられます (marker={marker})")
        if not callable(t):
            t = _constant_function(t)
        coeffs = facet_projection(um, facets, t) * mesh.facet_areas[facets][:, None]
        rows = offsets['ubar'] + um.entity_dofs[facets].ravel()
        np.add.at(b, rows, coeffs.ravel())
    return b


def _constant_function(value):
    value = np.asarray(value, dtype=float)

    def const(x):
        return np.tile(value, (len(x), 1))
    return const


# ----------------------------------------------------------------------
# ブロック系
# ----------------------------------------------------------------------
@dataclass
class BlockSystem:
    """
    Dirichlet 自由度を消去した大域系。
    未知数の並びは [u, ū, p_T, p̄_T, z, p, p̄]（トレースは自由な自由度のみ）。
    """
    spaces: object
    params: ModelParams
    matrix: sp.csr_matrix
    rhs: np.ndarray
    offsets: dict
    lifting: sp.csr_matrix
    constrained_values: np.ndarray
    free_transform: sp.csr_matrix
    constrained_transform: sp.csr_matrix
    raw_matrix: sp.csr_matrix = field(repr=False, default=None)

    @property
    def size(self):
        return self.matrix.shape[0]

    def field_slice(self, name):
        start, stop = self.offsets[name]
        return slice(start, stop)

    def block(self, row_field, col_field):
        return self.matrix[self.field_slice(row_field), self.field_slice(col_field)]

    def cell_indices(self):
        return np.concatenate([np.arange(*self.offsets[name]) for name in CELL_FIELDS])

    def trace_indices(self):
        return np.concatenate([np.arange(*self.offsets[name]) for name in TRACE_FIELDS])

    def cell_dof_table(self):
        """セルごとのセル場自由度 (nc, 局所数)。並びは u, p_T, z, p"""
        return np.hstack([self.offsets[name][0] + self.spaces[name].entity_dofs for name in CELL_FIELDS])

    def is_symmetric(self, rtol=1e-12):
        diff = abs(self.matrix - self.matrix.T)
        scale = abs(self.matrix).max()
        return diff.max() <= rtol * scale if diff.nnz else True

    def full_solution(self, x):
        """自由な未知数 x から各場の自由度ベクトル（拘束値込み）を作ります"""
        out = {}
        con_start = 0
        for name in FIELDS:
            dofmap = self.spaces[name]
            values = np.zeros(dofmap.size)
            values[dofmap.free] = x[self.field_slice(name)]
            n_con = len(dofmap.constrained_dofs)
            values[dofmap.constrained_dofs] = self.constrained_values[con_start:con_start + n_con]
            con_start += n_con
            out[name] = values
        return out

    def raw_fields(self, x):
        """各場の面ごと（セルごと）の係数ベクトル"""
        return {name: self.spaces[name].embedding() @ values for name, values in self.full_solution(x).items()}

    def dense_solve(self):
        return dense_solve(self.matrix.toarray(), self.rhs)

    def residual(self, x):
        return self.rhs - self.matrix @ x

    def with_load(self, load_raw, constrained_values=None):
        values = self.constrained_values if constrained_values is None else constrained_values
        rhs = self.free_transform.T @ load_raw - self.lifting @ values
        return replace(self, rhs=rhs, constrained_values=values)


def _constrained_vector(spaces, dirichlet):
    parts = []
    for name in FIELDS:
        dofmap = spaces[name]
        values = np.zeros(dofmap.size)
        for record in dirichlet:
            if record.field != name:
                continue
            if len(record.dofs) and not dofmap.constrained[record.dofs].all():
                raise ValueError(f"拘束されていない自由度に境界値が指定されました (field={name})")
            values[record.dofs] = record.values
        parts.append(values[dofmap.constrained_dofs])
    return np.concatenate(parts)


def assemble_biot(mesh, spaces, params, f=None, g=None, dirichlet=(), traction=None):
    """
    Biot 系 a_h(x, y) = (f, v) − (g, q) + ⟨t, v̄⟩ を組み立て、
    Dirichlet 自由度を対称消去した BlockSystem を返します。
    """
    raw = assemble_operator_raw(mesh, spaces, params)
    T_free, T_con = _transforms(spaces, FIELDS)
    A = (T_free.T @ raw @ T_free).tocsr()
    lifting = (T_free.T @ raw @ T_con).tocsr()
    offsets = {}
    start = 0
    for name in FIELDS:
        n = spaces[name].num_free
        offsets[name] = (start, start + n)
        start += n
    system = BlockSystem(spaces, params, A, np.zeros(A.shape[0]), offsets, lifting,
                         np.zeros(T_con.shape[1]), T_free, T_con, raw)
    system = system.with_load(assemble_load_raw(spaces, f, g, traction), _constrained_vector(spaces, dirichlet))
    logger.info(f"Biot系を組み立てました: 未知数 {system.size}, 非零 {A.nnz}")
    return system


def assemble_rhs(system, f=None, g=None, dirichlet=(), traction=None):
    """行列を再利用し、右辺と境界値だけを組み直します"""
    load = assemble_load_raw(system.spaces, f, g, traction)
    return system.with_load(load, _constrained_vector(system.spaces, dirichlet))


def assemble_timestep_rhs(params, g_tilde, previous, tau, dofmap=None):
    """
    後退 Euler の g = τ g̃ + c₀ pⁿ⁻¹ + α/λ (α pⁿ⁻¹ − p_Tⁿ⁻¹) を Q_h の係数で返します。
    previous = (pⁿ⁻¹, p_Tⁿ⁻¹) の係数ベクトル、g̃ は関数・係数・None。
    """
    if tau <= 0:
        raise ValueError(f"時間刻み tau は正の値が必要です (tau={tau})")
    p_prev, pT_prev = (np.asarray(v, dtype=float) for v in previous)
    if p_prev.shape != pT_prev.shape:
        raise ValueError("pⁿ⁻¹ と p_Tⁿ⁻¹ の長さが一致しません")
    g = params.c0 * p_prev + params.alpha / params.lam * (params.alpha * p_prev - pT_prev)
    if g_tilde is None:
        return g
    if callable(g_tilde):
        if dofmap is None:
            raise ValueError("関数で与えた g̃ の射影には Q_h の自由度マップが必要です")
        g_tilde = project_cells(dofmap, g_tilde)
    return g + tau * np.asarray(g_tilde, dtype=float)


# ----------------------------------------------------------------------
# 前処理ブロック
# ----------------------------------------------------------------------
@dataclass
class FieldBlocks:
    field: str
    trace_field: str
    cell: sp.csr_matrix
    coupling: sp.csr_matrix  # (トレース, セル)
    trace: sp.csr_matrix
    block_size: int = 0

    def full(self):
        if self.trace is None:
            return self.cell
        return sp.bmat([[self.cell, self.coupling.T], [self.coupling, self.trace]], format='csr')


@dataclass
class PreconditionerBlocks:
    variant: str
    fields: dict

    def __getitem__(self, name):
        return self.fields[name]


def _field_blocks(spaces, cell_field, trace_field, kernel, mesh, assembler):
    cm = spaces[cell_field]
    tm = spaces[trace_field] if trace_field else None
    n_cell = cm.raw_size
    n_total = n_cell + (tm.raw_size if tm else 0)
    acc = _Accumulator((n_total, n_total))
    for cell in range(mesh.num_cells):
        data = assembler.cell_data(cell)
        idx = cm.entity_dofs[cell]
        if tm is not None:
            idx = np.concatenate([idx, n_cell + _facet_dofs(tm, data)])
        acc.add(idx, idx, kernel(data))
    raw = acc.tocsr()
    if tm is None:
        return FieldBlocks(cell_field, None, raw, None, None, cm.local_size)
    E = tm.embedding().tocsc()[:, tm.free]
    A11 = raw[:n_cell, :n_cell].tocsr()
    A21 = (E.T @ raw[n_cell:, :n_cell]).tocsr()
    A22 = (E.T @ raw[n_cell:, n_cell:] @ E).tocsr()
    return FieldBlocks(cell_field, trace_field, A11, A21, A22, cm.local_size)


def assemble_preconditioner(mesh, spaces, params, variant='Phat'):
    """
    ブロック対角前処理の各場のブロック。
    variant 'P': 内積 (·,·)_v, (·,·)_{q_T}, (·,·)_w, (·,·)_q
    variant 'Phat': u に d_h, p に ã_h
    """
    _check_inputs(mesh, spaces, params)
    key = variant.lower()
    if key not in ('p', 'phat'):
        raise ValueError(f"前処理の種類は P または Phat です (variant={variant})")
    exact_forms = key == 'phat'
    assembler = ElementAssembler(mesh, params)
    mu, eta, kappa = params.mu, params.eta, params.kappa
    nQ, nfb, d = assembler.nQ, assembler.nfb, mesh.dim

    def pT_kernel(data):
        M = np.zeros((nQ + (d + 1) * nfb,) * 2)
        M[:nQ, :nQ] = data.volume / mu * np.eye(nQ)
        for fd in data.facets:
            sl = slice(nQ + fd.local * nfb, nQ + (fd.local + 1) * nfb)
            M[sl, sl] = data.length * fd.area / (mu * eta) * np.eye(nfb)
        return M

    def z_kernel(data):
        return data.volume / kappa * np.eye(assembler.nU)

    blocks = {
        'u': _field_blocks(spaces, 'u', 'ubar', lambda data: assembler.element_dh(data, exact_forms),
                           mesh, assembler),
        'pT': _field_blocks(spaces, 'pT', 'pTbar', pT_kernel, mesh, assembler),
        'z': _field_blocks(spaces, 'z', None, z_kernel, mesh, assembler),
        'p': _field_blocks(spaces, 'p', 'pbar', lambda data: assembler.element_pressure(data, exact_forms),
                           mesh, assembler),
    }
    name = 'Phat' if exact_forms else 'P'
    logger.info(f"前処理ブロックを組み立てました: {name}")
    return PreconditionerBlocks(name, blocks)
