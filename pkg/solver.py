"""
柯西问题 u̇ + B(t)u = f, u(0) = u0 的两种求解器
- oracle_solve: Crank-Nicolson 加一次 Richardson 外推，作为独立参照
- at_solve: 冻结系数半群表示 u = u1 + u2 + P u 的 Neumann 迭代
以及四种解空间范数
"""
import logging
import math
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import scipy.linalg

from config import (DEFAULT_GAUSS_ORDER, DEFAULT_GRID_CELLS, DEFAULT_MU_CAP, GRADED_MIN_WIDTH,
                    MU_LADDER_BASE, NEUMANN_MAX_ITER, NEUMANN_TOL, ORACLE_SUBSTEPS, POWER_ITERATIONS,
                    POWER_TOL)
from forms import FormPath
from hilbert import SpacePair, scale_factor, scale_factor_inv

logger = logging.getLogger(__name__)

Source = Callable[[float], np.ndarray]


class SolverError(RuntimeError):
    """隐式矩阵奇异等线性代数失败"""


class ContractionError(RuntimeError):
    """μ 阶梯上找不到收缩的 Q^μ"""

    def __init__(self, message: str, ladder: List[Dict]):
        super().__init__(message)
        self.ladder = ladder


class ConvergenceError(RuntimeError):
    """Neumann 迭代超过最大次数"""

    def __init__(self, message: str, last_increment: float):
        super().__init__(message)
        self.last_increment = last_increment


@dataclass(frozen=True)
class TimeGrid:
    """时间网格 0 = t_0 < … < t_K = T，每个单元使用 gauss_order 阶 Gauss 求积"""
    horizon: float
    nodes: np.ndarray
    gauss_order: int = DEFAULT_GAUSS_ORDER

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise ValueError("时间网格至少需要两个节点")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("时间网格节点必须严格递增")
        if nodes[0] != 0 or abs(nodes[-1] - self.horizon) > 1e-12 * self.horizon:
            raise ValueError(f"时间网格必须从 0 到 T={self.horizon}")
        if self.gauss_order < 1:
            raise ValueError(f"Gauss 阶数必须为正, 实际 {self.gauss_order}")
        object.__setattr__(self, 'nodes', nodes)

    @classmethod
    def uniform(cls, horizon: float, cells: int = DEFAULT_GRID_CELLS,
                gauss_order: int = DEFAULT_GAUSS_ORDER) -> 'TimeGrid':
        nodes = np.linspace(0.0, horizon, cells + 1)
        nodes[-1] = horizon
        return cls(horizon=horizon, nodes=nodes, gauss_order=gauss_order)

    @property
    def cells(self) -> int:
        return len(self.nodes) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    def trapezoid_weights(self) -> np.ndarray:
        w = np.zeros(len(self.nodes))
        w[:-1] += self.widths / 2
        w[1:] += self.widths / 2
        return w


@dataclass
class Trajectory:
    """网格上的解：节点值、由方程得到的导数、来源标签"""
    grid: TimeGrid
    values: np.ndarray
    derivatives: Optional[np.ndarray] = None
    provenance: str = 'oracle'
    extras: Dict = field(default_factory=dict)

    def difference(self, other: 'Trajectory') -> 'Trajectory':
        if not np.allclose(self.grid.nodes, other.grid.nodes):
            raise ValueError("两条轨迹的时间网格不同")
        derivs = None
        if self.derivatives is not None and other.derivatives is not None:
            derivs = self.derivatives - other.derivatives
        return Trajectory(grid=self.grid, values=self.values - other.values, derivatives=derivs,
                          provenance=f"{self.provenance}-{other.provenance}")


def _sample_source(f: Optional[Source], times: np.ndarray, dim: int) -> np.ndarray:
    if f is None:
        return np.zeros((len(times), dim), dtype=complex)
    return np.stack([np.asarray(f(float(t)), dtype=complex).reshape(dim) for t in times])


def _h_inverse(sp: SpacePair) -> np.ndarray:
    return scipy.linalg.inv(sp.gram_H)


def _fill_derivatives(path: FormPath, times: np.ndarray, values: np.ndarray, f: Optional[Source]) -> np.ndarray:
    """u̇(t_i) = f(t_i) - B(t_i)u(t_i)"""
    ops = _h_inverse(path.space) @ path.eval_many(times)
    source = _sample_source(f, times, path.space.dim)
    return source - np.einsum('kij,kj->ki', ops, values)


def _crank_nicolson(path: FormPath, f: Optional[Source], u0: np.ndarray, grid: TimeGrid,
                    substeps: int) -> np.ndarray:
    sp = path.space
    gram = sp.gram_H
    fine = np.concatenate([np.linspace(a, b, substeps + 1)[:-1] for a, b in zip(grid.nodes[:-1], grid.nodes[1:])]
                          + [grid.nodes[-1:]])
    forms = path.eval_many(fine)
    source = _sample_source(f, fine, sp.dim) @ gram.T
    values = [u0]
    u = u0.copy()
    for n in range(len(fine) - 1):
        h = fine[n + 1] - fine[n]
        lhs = gram + 0.5 * h * forms[n + 1]
        rhs = (gram - 0.5 * h * forms[n]) @ u + 0.5 * h * (source[n] + source[n + 1])
        try:
            u = scipy.linalg.solve(lhs, rhs)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
            raise SolverError(f"t={fine[n + 1]:.6g} 处隐式矩阵奇异: {e}")
        if (n + 1) % substeps == 0:
            values.append(u)
    return np.stack(values)


def oracle_solve(path: FormPath, f: Optional[Source], u0, grid: TimeGrid,
                 substeps: int = ORACLE_SUBSTEPS) -> Trajectory:
    """
    Crank-Nicolson 参照解
    Args:
        path: 形式路径
        f: 右端项 t -> H 坐标向量（None 表示 0）
        u0: 初值
        grid: 时间网格
        substeps: 每个单元的子步数；另以 2·substeps 计算一次并做 Richardson 外推
    Returns:
        Trajectory（provenance='oracle'）
    """
    if substeps < 1:
        raise ValueError(f"substeps 至少为 1, 实际 {substeps}")
    u0 = np.asarray(u0, dtype=complex).reshape(path.space.dim)
    coarse = _crank_nicolson(path, f, u0, grid, substeps)
    fine = _crank_nicolson(path, f, u0, grid, 2 * substeps)
    values = (4 * fine - coarse) / 3
    values[0] = u0
    derivs = _fill_derivatives(path, grid.nodes, values, f)
    return Trajectory(grid=grid, values=values, derivatives=derivs, provenance='oracle',
                      extras={'substeps': substeps})


def _hermite_basis(tau: np.ndarray):
    tau2, tau3 = tau ** 2, tau ** 3
    return 2 * tau3 - 3 * tau2 + 1, tau3 - 2 * tau2 + tau, -2 * tau3 + 3 * tau2, tau3 - tau2


def _hermite_basis_derivative(tau: np.ndarray):
    tau2 = tau ** 2
    return 6 * tau2 - 6 * tau, 3 * tau2 - 4 * tau + 1, -6 * tau2 + 6 * tau, 3 * tau2 - 2 * tau


def _exp_moments(z: np.ndarray, count: int) -> np.ndarray:
    """
    ∫₀¹ e^{-(1-x)Z} x^j dx = j!·φ_{j+1}(-Z)，j = 0..count-1
    φ 函数取自增广块矩阵 [[-Z, I, 0, …], [0, 0, I, …], …] 指数的首行块
    """
    dim = z.shape[-1]
    size = dim * (count + 1)
    augmented = np.zeros((size, size), dtype=complex)
    augmented[:dim, :dim] = -z
    for k in range(count):
        augmented[k * dim:(k + 1) * dim, (k + 1) * dim:(k + 2) * dim] = np.eye(dim)
    top = scipy.linalg.expm(augmented)[:dim]
    return np.stack([math.factorial(j) * top[:, (j + 1) * dim:(j + 2) * dim] for j in range(count)])


def _block_norm(matrix: np.ndarray, iterations: int, tol: float, block: int = 8):
    """块幂迭代（Rayleigh-Ritz）估计谱范数；返回 (估计值, 是否收敛)"""
    n = matrix.shape[1]
    block = min(block, n)
    rng = np.random.default_rng(0)
    basis, _ = np.linalg.qr(rng.standard_normal((n, block)) + 0j)
    estimate = 0.0
    for _ in range(iterations):
        image = matrix @ basis
        top = float(np.linalg.svd(image, compute_uv=False)[0])
        if estimate > 0 and abs(top - estimate) <= tol * top:
            return top, True
        estimate = top
        basis, _ = np.linalg.qr(matrix.conj().T @ image)
    return estimate, estimate == 0.0


class ATSolver:
    """冻结系数表示的离散算子：u1、u2、P、Q 按节点组装为块矩阵"""

    def __init__(self, path: FormPath, grid: TimeGrid, min_width: float = GRADED_MIN_WIDTH):
        self.logger = logging.getLogger(__name__)
        self.path = path
        self.grid = grid
        self.space = path.space
        self.dim = path.space.dim
        self.min_width = min_width * grid.horizon
        self._h_inv = _h_inverse(path.space)
        self.node_ops = self._ops(path.eval_many(grid.nodes))

        gauss_x, gauss_w = np.polynomial.legendre.leggauss(grid.gauss_order)
        self._gauss = (gauss_x, gauss_w)
        # ℓ_k(x) = Σ_j lagrange[j, k] x^j，x ∈ [0, 1] 上以 Gauss 节点为插值点
        self._lagrange = np.linalg.inv(np.vander((gauss_x + 1) / 2, grid.gauss_order, increasing=True))
        nodes, widths = grid.nodes, grid.widths
        cell_points = (nodes[:-1, None] + widths[:, None] * (gauss_x[None, :] + 1) / 2)
        self._cell_points = cell_points
        self._cell_weights = widths[:, None] * gauss_w[None, :] / 2
        self._cell_ops = self._ops(path.eval_many(cell_points.ravel())).reshape(
            grid.cells, grid.gauss_order, self.dim, self.dim)

        self.rows = [None] + [self._row(i) for i in range(1, grid.cells + 1)]
        self._hermite = None
        self._linear_p = None
        self.logger.debug(f"组装完成: {grid.cells} 个单元, 求积点 {sum(len(r['s']) for r in self.rows[1:])}")

    def _ops(self, forms: np.ndarray) -> np.ndarray:
        return self._h_inv @ forms

    def _graded_segments(self, a: float, b: float):
        edges = [a]
        remaining = b - a
        while remaining / 2 >= self.min_width:
            remaining /= 2
            edges.append(b - remaining)
        edges.append(b)
        return list(zip(edges[:-1], edges[1:]))

    def _row(self, i: int) -> Dict:
        gauss_x, gauss_w = self._gauss
        nodes, widths = self.grid.nodes, self.grid.widths
        p = self.grid.gauss_order
        s_parts, w_parts, ops_parts = [], [], []
        if i >= 2:
            s_parts.append(self._cell_points[:i - 1].ravel())
            w_parts.append(self._cell_weights[:i - 1].ravel())
            ops_parts.append(self._cell_ops[:i - 1].reshape(-1, self.dim, self.dim))
        graded = self._graded_segments(nodes[i - 1], nodes[i])
        graded_s = []
        for a, b in graded:
            graded_s.append((a + b) / 2 + (b - a) / 2 * gauss_x)
            w_parts.append((b - a) / 2 * gauss_w)
        graded_s = np.concatenate(graded_s)
        s_parts.append(graded_s)
        ops_parts.append(self._ops(self.path.eval_many(graded_s)))

        s = np.concatenate(s_parts)
        weights = np.concatenate(w_parts)
        ops = np.concatenate(ops_parts)
        cell = np.concatenate([np.repeat(np.arange(i - 1), p), np.full(len(graded_s), i - 1)])
        local = (s - nodes[cell]) / widths[cell]
        tau = nodes[i] - s
        op_i = self.node_ops[i]
        segments = [(nodes[j], nodes[j + 1]) for j in range(i - 1)] + graded
        return {
            's': s, 'weights': weights, 'cell': cell, 'local': local, 'tau': tau,
            'expm': scipy.linalg.expm(-tau[:, None, None] * op_i),
            'exp_weights': self._exp_weights(op_i, segments, nodes[i]),
            'diff': op_i - ops,
        }

    def _exp_weights(self, op: np.ndarray, segments, end: float) -> np.ndarray:
        """
        矩阵权 W_k = ∫_a^b e^{-(end-s)B} ℓ_k(s) ds：指数因子精确积分，只对光滑因子做 Lagrange 插值
        Args:
            op: 冻结算子 B(end)
            segments: 积分段 [(a, b), …]，顺序与求积点一致
            end: 冻结时刻
        Returns:
            (段数·gauss_order, dim, dim) 的权数组
        """
        count = self.grid.gauss_order
        ends = np.array([b for _, b in segments])
        decay = scipy.linalg.expm(-(end - ends)[:, None, None] * op)
        cache = {}
        blocks = []
        for (a, b), factor in zip(segments, decay):
            length = b - a
            if length not in cache:
                moments = _exp_moments(length * op, count)
                cache[length] = length * np.einsum('jk,jab->kab', self._lagrange, moments)
            blocks.append(factor @ cache[length])
        return np.concatenate(blocks)

    def _p_kernel(self, row: Dict) -> np.ndarray:
        return row['exp_weights'] @ row['diff']

    def _q_kernel(self, i: int, row: Dict, mu: float) -> np.ndarray:
        eye = np.eye(self.dim)
        shifted_i = self.node_ops[i] + mu * eye
        shifted_s = self.node_ops[i] - row['diff'] + mu * eye
        try:
            inv_s = np.linalg.inv(shifted_s)
        except np.linalg.LinAlgError as e:
            raise SolverError(f"μ={mu} 时 B(s)+μ 奇异: {e}")
        decay = np.exp(-mu * row['tau'])[:, None, None]
        kernel = shifted_i @ (decay * row['expm']) @ row['diff'] @ inv_s
        return row['weights'][:, None, None] * kernel

    def _empty_blocks(self) -> np.ndarray:
        size = self.grid.cells + 1
        return np.zeros((size, size, self.dim, self.dim), dtype=complex)

    def _scatter_linear(self, target: np.ndarray, i: int, row: Dict, kernel: np.ndarray):
        local = row['local'][:, None, None]
        np.add.at(target[i], row['cell'], kernel * (1 - local))
        np.add.at(target[i], row['cell'] + 1, kernel * local)

    def hermite_maps(self):
        """(Cv, Cd)：(P h)_i = Σ_j Cv_ij h_j + Cd_ij ḣ_j（三次 Hermite 插值）"""
        if self._hermite is None:
            cv, cd = self._empty_blocks(), self._empty_blocks()
            widths = self.grid.widths
            for i in range(1, self.grid.cells + 1):
                row = self.rows[i]
                kernel = self._p_kernel(row)
                h00, h10, h01, h11 = _hermite_basis(row['local'])
                hc = widths[row['cell']]
                np.add.at(cv[i], row['cell'], kernel * h00[:, None, None])
                np.add.at(cv[i], row['cell'] + 1, kernel * h01[:, None, None])
                np.add.at(cd[i], row['cell'], kernel * (h10 * hc)[:, None, None])
                np.add.at(cd[i], row['cell'] + 1, kernel * (h11 * hc)[:, None, None])
            self._hermite = (cv, cd)
        return self._hermite

    def linear_p(self) -> np.ndarray:
        """P 的分段线性插值版本"""
        if self._linear_p is None:
            blocks = self._empty_blocks()
            for i in range(1, self.grid.cells + 1):
                self._scatter_linear(blocks, i, self.rows[i], self._p_kernel(self.rows[i]))
            self._linear_p = blocks
        return self._linear_p

    def q_blocks(self, mu: float) -> np.ndarray:
        """Q^μ 的分段线性插值块矩阵"""
        if mu < 0:
            raise ValueError(f"μ 必须非负, 实际 {mu}")
        blocks = self._empty_blocks()
        for i in range(1, self.grid.cells + 1):
            self._scatter_linear(blocks, i, self.rows[i], self._q_kernel(i, self.rows[i], mu))
        return blocks

    def _flatten(self, blocks: np.ndarray) -> np.ndarray:
        size = (self.grid.cells + 1) * self.dim
        return blocks.transpose(0, 2, 1, 3).reshape(size, size)

    def u1(self, u0: np.ndarray) -> np.ndarray:
        """u1(t_i) = e^{-t_i B(t_i)} u0"""
        semigroups = scipy.linalg.expm(-self.grid.nodes[:, None, None] * self.node_ops)
        return semigroups @ u0

    def u2(self, f: Optional[Source]) -> np.ndarray:
        """u2(t_i) = ∫₀^{t_i} e^{-(t_i-s)B(t_i)} f(s) ds"""
        out = np.zeros((self.grid.cells + 1, self.dim), dtype=complex)
        if f is None:
            return out
        for i in range(1, self.grid.cells + 1):
            row = self.rows[i]
            source = _sample_source(f, row['s'], self.dim)
            out[i] = np.einsum('kij,kj->i', row['exp_weights'], source)
        return out

    def q_norm(self, mu: float, iterations: int = POWER_ITERATIONS, tol: float = POWER_TOL) -> Dict:
        """Q^μ 在离散 L²(0,T;H) 中的范数估计"""
        blocks = self.q_blocks(mu)
        root_w = np.sqrt(self.grid.trapezoid_weights())
        left = scale_factor(self.space, 0.0)
        right = scale_factor_inv(self.space, 0.0)
        weighted = (root_w[:, None, None, None] * (left @ blocks @ right)
                    / np.where(root_w > 0, root_w, 1.0)[None, :, None, None])
        matrix = self._flatten(weighted)
        value, converged = _block_norm(matrix, iterations, tol)
        if not converged:
            value = float(np.linalg.norm(matrix))
            self.logger.warning(f"⚠️ μ={mu} 时幂迭代未收敛，改用 Frobenius 上界 {value:.4g}")
        return {'mu': mu, 'q': value, 'coarse': not converged}

    def choose_mu(self, mu_cap: float = DEFAULT_MU_CAP):
        """μ 阶梯 0, b, b², … ≤ mu_cap，取首个 q < 1/2，否则取 q < 0.95 的最小者"""
        ladder = [0.0]
        mu = MU_LADDER_BASE
        while mu <= mu_cap:
            ladder.append(mu)
            mu *= MU_LADDER_BASE
        log = []
        for mu in ladder:
            entry = self.q_norm(mu)
            log.append(entry)
            self.logger.debug(f"μ={mu:g}: q={entry['q']:.4g}")
            if entry['q'] < 0.5:
                return mu, entry['q'], log
        best = min(log, key=lambda e: e['q'])
        if best['q'] < 0.95:
            return best['mu'], best['q'], log
        raise ContractionError(
            f"no contraction; refine grid or raise μ cap (μ ≤ {mu_cap:g}, 最小 q={best['q']:.4g})", log)

    def solve(self, f: Optional[Source], u0, mu: Optional[float] = None, mu_cap: float = DEFAULT_MU_CAP,
              tol: float = NEUMANN_TOL, max_iter: int = NEUMANN_MAX_ITER) -> Trajectory:
        """
        Neumann 迭代 u ← u1 + u2 + P u
        平移问题 v = e^{-μt}u 的迭代与原未知量上的迭代逐项对应，μ 只决定收缩证书
        """
        u0 = np.asarray(u0, dtype=complex).reshape(self.dim)
        if mu is None:
            mu, q, ladder = self.choose_mu(mu_cap)
        else:
            entry = self.q_norm(mu)
            mu, q, ladder = mu, entry['q'], [entry]
            if q >= 0.95:
                raise ContractionError(f"no contraction; refine grid or raise μ cap (μ={mu:g}, q={q:.4g})", ladder)

        nodes = self.grid.nodes
        source = _sample_source(f, nodes, self.dim)
        cv, cd = self.hermite_maps()
        # 导数由方程给出：ḣ_j = f_j - B_j h_j
        step = cv - np.einsum('ijab,jbc->ijac', cd, self.node_ops)
        step_matrix = self._flatten(step)
        start = self.u1(u0) + self.u2(f)
        constant = start + np.einsum('ijab,jb->ia', cd, source)
        constant = constant.ravel()

        h_weight = scale_factor(self.space, 0.0)
        u = start.ravel()
        scale = max(1.0, float(np.max(np.abs(u))))
        increments = []
        for iteration in range(1, max_iter + 1):
            new = constant + step_matrix @ u
            delta = (new - u).reshape(-1, self.dim) @ h_weight.T
            increment = float(np.max(np.linalg.norm(delta, axis=1)))
            increments.append(increment)
            u = new
            if increment <= tol * scale:
                break
        else:
            raise ConvergenceError(
                f"Neumann 迭代 {max_iter} 次未收敛, 最后增量 {increments[-1]:.3e}", increments[-1])

        values = u.reshape(-1, self.dim)
        values[0] = u0
        derivs = source - np.einsum('kij,kj->ki', self.node_ops, values)
        self.logger.debug(f"Neumann 迭代 {iteration} 次收敛, μ={mu:g}, q={q:.4g}")
        return Trajectory(grid=self.grid, values=values, derivatives=derivs, provenance='at-solver',
                          extras={'mu': mu, 'q': q, 'iterations': iteration, 'ladder': ladder,
                                  'increments': increments})


def at_u1(path: FormPath, grid: TimeGrid, u0) -> Trajectory:
    """冻结系数齐次部分 e^{-t B(t)} u0"""
    solver = ATSolver(path, grid)
    values = solver.u1(np.asarray(u0, dtype=complex).reshape(path.space.dim))
    return Trajectory(grid=grid, values=values, provenance='at-u1')


def at_u2(path: FormPath, grid: TimeGrid, f: Optional[Source]) -> Trajectory:
    """冻结系数非齐次部分 ∫₀ᵗ e^{-(t-s)B(t)} f(s) ds"""
    solver = ATSolver(path, grid)
    return Trajectory(grid=grid, values=solver.u2(f), provenance='at-u2')


def apply_P(path: FormPath, grid: TimeGrid, h: Trajectory, solver: Optional[ATSolver] = None) -> Trajectory:
    """
    (P h)(t) = ∫₀ᵗ e^{-(t-s)B(t)}(B(t) - B(s)) h(s) ds
    h 带导数时用三次 Hermite 插值，否则分段线性插值
    """
    solver = solver or ATSolver(path, grid)
    if h.derivatives is not None:
        cv, cd = solver.hermite_maps()
        values = np.einsum('ijab,jb->ia', cv, h.values) + np.einsum('ijab,jb->ia', cd, h.derivatives)
    else:
        values = np.einsum('ijab,jb->ia', solver.linear_p(), h.values)
    return Trajectory(grid=grid, values=values, provenance='at-P')


def apply_Q(path: FormPath, mu: float, grid: TimeGrid, g: Trajectory,
            solver: Optional[ATSolver] = None) -> Trajectory:
    """(Q^μ g)(t) = ∫₀ᵗ (B(t)+μ)e^{-(t-s)(B(t)+μ)}(B(t)-B(s))(B(s)+μ)⁻¹ g(s) ds"""
    solver = solver or ATSolver(path, grid)
    values = np.einsum('ijab,jb->ia', solver.q_blocks(mu), g.values)
    return Trajectory(grid=grid, values=values, provenance='at-Q', extras={'mu': mu})


def q_norm_estimate(path: FormPath, mu: float, grid: TimeGrid, solver: Optional[ATSolver] = None) -> Dict:
    """
    ‖Q^μ‖ 在离散 L²(0,T;H) 中的估计（块幂迭代；不收敛时退回 Frobenius 上界并标记 coarse）
    Returns:
        {'mu', 'q', 'coarse'}
    """
    solver = solver or ATSolver(path, grid)
    return solver.q_norm(mu)


def p_norm_estimate(path: FormPath, grid: TimeGrid, solver: Optional[ATSolver] = None) -> float:
    """P 在离散 C(0,T;V) 中的范数：max_i Σ_j ‖P_ij‖_{V→V}"""
    solver = solver or ATSolver(path, grid)
    blocks = solver.linear_p()
    weighted = scale_factor(path.space, 1.0) @ blocks @ scale_factor_inv(path.space, 1.0)
    norms = np.linalg.norm(weighted, 2, axis=(-2, -1))
    return float(np.max(norms.sum(axis=1)))


def q_identity_residual(path: FormPath, traj: Trajectory, mu: float = 0.0,
                        solver: Optional[ATSolver] = None) -> float:
    """
    诊断量：w = (B+μ)v 应满足 w - Q^μ w = (B+μ)(v1 + v2)，v = e^{-μt}u
    Returns:
        离散 L²(0,T;H) 中的相对残差
    """
    if traj.derivatives is None:
        raise ValueError("需要带导数的完整轨迹")
    grid = traj.grid
    solver = solver or ATSolver(path, grid)
    nodes = grid.nodes
    damp = np.exp(-mu * nodes)[:, None]
    shifted = solver.node_ops + mu * np.eye(solver.dim)
    u0 = traj.values[0]
    # f_i = u̇_i + B_i u_i
    source = traj.derivatives + np.einsum('kij,kj->ki', solver.node_ops, traj.values)
    nodes_source = {float(t): source[k] for k, t in enumerate(nodes)}

    def f_interp(t):
        if t in nodes_source:
            return nodes_source[t]
        return np.array([np.interp(t, nodes, source[:, j].real) + 1j * np.interp(t, nodes, source[:, j].imag)
                         for j in range(solver.dim)])

    w = np.einsum('kij,kj->ki', shifted, damp * traj.values)
    base = np.einsum('kij,kj->ki', shifted, damp * (solver.u1(u0) + solver.u2(f_interp)))
    residual = w - np.einsum('ijab,jb->ia', solver.q_blocks(mu), w) - base
    weights = grid.trapezoid_weights()
    h_weight = scale_factor(path.space, 0.0)

    def l2(x):
        return math.sqrt(float(np.sum(weights * np.linalg.norm(x @ h_weight.T, axis=1) ** 2)))

    norm_w = l2(w)
    return l2(residual) / norm_w if norm_w > 0 else l2(residual)


def at_solve(path: FormPath, f: Optional[Source], u0, grid: TimeGrid, mu: Optional[float] = None,
             tol: float = NEUMANN_TOL, max_iter: int = NEUMANN_MAX_ITER,
             mu_cap: float = DEFAULT_MU_CAP) -> Trajectory:
    """
    冻结系数表示求解
    Args:
        path: 形式路径（原路径或仿射逼近）
        f: 右端项
        u0: 初值
        grid: 时间网格
        mu: 指定平移量；None 时按阶梯搜索
        tol: C([0,T];H) 中的相对增量阈值
        max_iter: 最大迭代次数
        mu_cap: μ 阶梯上限
    Returns:
        Trajectory（provenance='at-solver'）
    """
    return ATSolver(path, grid).solve(f, u0, mu=mu, mu_cap=mu_cap, tol=tol, max_iter=max_iter)


def solution_norms(sp: SpacePair, traj: Trajectory) -> Dict[str, float]:
    """
    解空间范数
    L² 部分按单元 Gauss 求积（节点值与导数的三次 Hermite 插值），sup 部分取节点最大值
    Returns:
        {'mr2_VVp', 'mr2_VH', 'sup_H', 'sup_V', 'l2_H', 'l2_V', 'l2_dot_Vp', 'l2_dot_H', 'h1_H'}
    """
    if traj.derivatives is None:
        raise ValueError("需要带导数的完整轨迹")
    grid = traj.grid
    x, w = np.polynomial.legendre.leggauss(grid.gauss_order)
    tau = (x + 1) / 2
    h00, h10, h01, h11 = _hermite_basis(tau)
    d00, d10, d01, d11 = _hermite_basis_derivative(tau)
    widths = grid.widths[:, None, None]
    u, du = traj.values, traj.derivatives
    left, right, dleft, dright = u[:-1, None, :], u[1:, None, :], du[:-1, None, :], du[1:, None, :]
    vals = (h00[None, :, None] * left + (h10[None, :, None] * widths) * dleft
            + h01[None, :, None] * right + (h11[None, :, None] * widths) * dright)
    derivs = (d00[None, :, None] * left / widths + d10[None, :, None] * dleft
              + d01[None, :, None] * right / widths + d11[None, :, None] * dright)
    quad_w = grid.widths[:, None] * w[None, :] / 2

    def l2(samples, scale):
        coeffs = samples @ scale_factor(sp, scale).T
        return math.sqrt(float(np.sum(quad_w * np.sum(np.abs(coeffs) ** 2, axis=-1))))

    def node_sup(scale):
        return float(np.max(np.linalg.norm(u @ scale_factor(sp, scale).T, axis=1)))

    l2_H, l2_V = l2(vals, 0.0), l2(vals, 1.0)
    l2_dot_Vp, l2_dot_H = l2(derivs, -1.0), l2(derivs, 0.0)
    return {
        'mr2_VVp': l2_V + l2_dot_Vp,
        'mr2_VH': l2_V + l2_dot_H,
        'sup_H': node_sup(0.0),
        'sup_V': node_sup(1.0),
        'l2_H': l2_H,
        'l2_V': l2_V,
        'l2_dot_Vp': l2_dot_Vp,
        'l2_dot_H': l2_dot_H,
        'h1_H': math.sqrt(l2_H ** 2 + l2_dot_H ** 2),
    }


def write_trajectory_csv(sp: SpacePair, traj: Trajectory, out: str):
    """写出 t, re_k, im_k, norm_H, norm_V；out 为 '-' 时写到标准输出"""
    data = {'t': traj.grid.nodes}
    for k in range(sp.dim):
        data[f're_{k}'] = traj.values[:, k].real
        data[f'im_{k}'] = traj.values[:, k].imag
    data['norm_H'] = np.linalg.norm(traj.values @ scale_factor(sp, 0.0).T, axis=1)
    data['norm_V'] = np.linalg.norm(traj.values @ scale_factor(sp, 1.0).T, axis=1)
    frame = pd.DataFrame(data)
    target = sys.stdout if out == '-' else out
    frame.to_csv(target, index=False, float_format='%.12g')
