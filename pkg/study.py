"""
收敛实验
仿射逼近阶梯上的误差表、包络、速率拟合、数据一致性与几个先验估计比值
"""
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from affine import build_affine
from config import AFFINE_QUAD_ORDER, DEFAULT_MU_CAP, DEFAULT_SEED, NEUMANN_MAX_ITER, NEUMANN_TOL, ORACLE_SUBSTEPS
from forms import FormPath, HypothesisError, ModulusProfile, measure_modulus
from hilbert import SpacePair, form_operator_norms, scale_factor
from solver import (ATSolver, ContractionError, ConvergenceError, SolverError, Source, TimeGrid,
                    Trajectory, oracle_solve, solution_norms)

logger = logging.getLogger(__name__)

CSV_COLUMNS = ['m', 'mesh', 'd_lambda', 'err_mr2_vvp', 'err_mr2_vh', 'err_sup_h', 'err_sup_v',
               'envelope', 'ratio', 'runtime_ms']
ERROR_COLUMNS = ['err_mr2_vvp', 'err_mr2_vh', 'err_sup_h', 'err_sup_v']
NOISE_FLOOR = 1e-10
STRONG_ERROR_LIMIT = 1e-4


@dataclass(frozen=True)
class EnvelopeSpec:
    """误差包络：仿射族 E(|Λ|) 与一般逼近序列 E(n)"""
    gamma: float
    profile: ModulusProfile

    def affine(self, mesh: float, d_lambda: float) -> float:
        """E(|Λ|) = (1 + |Λ|^{-γ/2})·d_Λ + ∫₀^{2|Λ|} ω(t)/t^{1+γ/2} dt"""
        if mesh <= 0:
            raise ValueError(f"网格尺寸必须为正, 实际 {mesh}")
        return (1 + mesh ** (-self.gamma / 2)) * d_lambda + self.profile.dini_tail(2 * mesh)

    @staticmethod
    def sequence_envelope(gamma: float, n: int, d_n: float, profile_n: ModulusProfile) -> float:
        """E(n) = (1 + n^{γ/2})·d_n + ∫₀^{1/n} ω_n(r)/r^{1+γ/2} dr"""
        if n < 1:
            raise ValueError(f"n 必须为正, 实际 {n}")
        return (1 + n ** (gamma / 2)) * d_n + profile_n.dini_tail(1.0 / n)


@dataclass
class StudyRow:
    """阶梯上一个 m 的结果"""
    m: int
    mesh: float
    d_lambda: float
    err_mr2_vvp: float = math.nan
    err_mr2_vh: float = math.nan
    err_sup_h: float = math.nan
    err_sup_v: float = math.nan
    envelope: float = math.nan
    ratio: float = math.nan
    runtime_ms: float = 0.0
    status: str = 'ok'
    note: str = ''
    h1_H: float = math.nan
    extras: Dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == 'ok'

    @property
    def max_error(self) -> float:
        return max(getattr(self, c) for c in ERROR_COLUMNS)

    def to_dict(self) -> Dict:
        data = {c: getattr(self, c) for c in CSV_COLUMNS}
        data.update({'status': self.status, 'note': self.note, 'h1_H': self.h1_H})
        return data


@dataclass(frozen=True)
class AffineDatum:
    """数据 f(t) = a + b·t, u0"""
    a: np.ndarray
    b: np.ndarray
    u0: np.ndarray

    def source(self, t: float) -> np.ndarray:
        return self.a + self.b * t

    def scaled(self, factor: complex) -> 'AffineDatum':
        return AffineDatum(self.a * factor, self.b * factor, self.u0 * factor)

    def source_l2(self, sp: SpacePair, horizon: float, scale: float) -> float:
        """‖f‖_{L²(0,T;V_σ)} 的闭式"""
        fa, fb = scale_factor(sp, scale) @ self.a, scale_factor(sp, scale) @ self.b
        T = horizon
        sq = (T * np.vdot(fa, fa).real + T ** 2 * np.vdot(fa, fb).real
              + T ** 3 / 3 * np.vdot(fb, fb).real)
        return math.sqrt(max(float(sq), 0.0))

    def initial_norm(self, sp: SpacePair, scale: float) -> float:
        return float(np.linalg.norm(scale_factor(sp, scale) @ self.u0))


def random_data_batch(sp: SpacePair, horizon: float, size: int, seed: int = DEFAULT_SEED) -> List[AffineDatum]:
    """
    生成归一化随机数据：‖f‖_{L²(0,T;H)} + ‖u0‖_V = 1
    Args:
        sp: Hilbert 对
        horizon: T
        size: 数据个数
        seed: 随机种子
    """
    rng = np.random.default_rng(seed)
    batch = []
    for _ in range(size):
        a, b, u0 = (rng.standard_normal((3, sp.dim)) + 1j * rng.standard_normal((3, sp.dim)))
        datum = AffineDatum(a, b, u0)
        total = datum.source_l2(sp, horizon, 0.0) + datum.initial_norm(sp, 1.0)
        batch.append(datum.scaled(1.0 / total))
    return batch


def _deviation(fp: FormPath, afp: FormPath, out_scale: float, samples: int = 513) -> float:
    times = np.linspace(0.0, fp.horizon, samples)
    diff = afp.eval_many(times) - fp.eval_many(times)
    return float(np.max(form_operator_norms(fp.space, diff, out_scale)))


def _solve(path: FormPath, f: Optional[Source], u0, grid: TimeGrid, method: str, substeps: int,
           mu_cap: float, tol: float, max_iter: int, solver: Optional[ATSolver] = None,
           mu: Optional[float] = None) -> Trajectory:
    if method == 'oracle':
        return oracle_solve(path, f, u0, grid, substeps=substeps)
    if method != 'at':
        raise ValueError(f"未知求解方法: {method}")
    solver = solver or ATSolver(path, grid)
    return solver.solve(f, u0, mu=mu, mu_cap=mu_cap, tol=tol, max_iter=max_iter)


def reference_solution(fp: FormPath, f: Optional[Source], u0, grid: TimeGrid,
                       substeps: int = ORACLE_SUBSTEPS) -> Trajectory:
    """参照解：8 倍子步的 oracle，并与 16 倍子步比较估计自身误差"""
    ref = oracle_solve(fp, f, u0, grid, substeps=8 * substeps)
    check = oracle_solve(fp, f, u0, grid, substeps=16 * substeps)
    ref.extras['self_error'] = solution_norms(fp.space, ref.difference(check))['sup_H']
    logger.debug(f"参照解自检误差 {ref.extras['self_error']:.3e}")
    return ref


def convergence_study(fp: FormPath, gamma: float, mesh_ladder: Sequence[int], f: Optional[Source], u0,
                      grid: Optional[TimeGrid] = None, method: str = 'at', substeps: int = ORACLE_SUBSTEPS,
                      mu_cap: float = DEFAULT_MU_CAP, tol: float = NEUMANN_TOL,
                      max_iter: int = NEUMANN_MAX_ITER, threads: int = 1, record_runtime: bool = False,
                      profile: Optional[ModulusProfile] = None,
                      quad_order: int = AFFINE_QUAD_ORDER) -> List[StudyRow]:
    """
    仿射逼近阶梯上的收敛实验
    Args:
        fp: 原形式路径
        gamma: 尺度指标
        mesh_ladder: 升序的区间数 m
        f, u0: 数据
        grid: 时间网格（缺省为默认均匀网格）
        method: 'at' 或 'oracle'，用于求解 u_Λ
        threads: 行级并行线程数
        record_runtime: 是否写入实测耗时（否则为 0，保证输出可复现）
        profile: 原路径的连续模（缺省时现场测量）
    Returns:
        按 m 排序的 StudyRow 列表；求解失败的行标记为 failed
    """
    ladder = [int(m) for m in mesh_ladder]
    if not ladder or any(m < 1 for m in ladder) or any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError(f"mesh_ladder 必须是严格升序的正整数, 实际 {list(mesh_ladder)}")
    profile = profile or measure_modulus(fp, gamma)
    if not profile.dini_finite:
        raise HypothesisError(
            f"连续模不满足 Dini 条件 (∫ω/t^(1+γ/2) = {profile.dini_integral}), 拒绝进行收敛实验")

    grid = grid or TimeGrid.uniform(fp.horizon)
    sp = fp.space
    envelope = EnvelopeSpec(gamma, profile)
    logger.info(f"🔍 收敛实验: m={ladder}, γ={gamma}, 方法 {method}")
    reference = reference_solution(fp, f, u0, grid, substeps)

    def job(m: int) -> StudyRow:
        afp = build_affine(fp, m, quad_order)
        mesh = afp.subdivision.mesh
        d_lambda = _deviation(fp, afp, -gamma)
        row = StudyRow(m=m, mesh=mesh, d_lambda=d_lambda, envelope=envelope.affine(mesh, d_lambda))
        started = time.perf_counter()
        try:
            sol = _solve(afp, f, u0, grid, method, substeps, mu_cap, tol, max_iter)
        except (ContractionError, ConvergenceError, SolverError) as e:
            logger.warning(f"⚠️ m={m} 求解失败: {e}")
            row.status, row.note = 'failed', str(e)
            return row
        if record_runtime:
            row.runtime_ms = (time.perf_counter() - started) * 1000
        errors = solution_norms(sp, sol.difference(reference))
        row.err_mr2_vvp, row.err_mr2_vh = errors['mr2_VVp'], errors['mr2_VH']
        row.err_sup_h, row.err_sup_v = errors['sup_H'], errors['sup_V']
        row.h1_H = solution_norms(sp, sol)['h1_H']
        row.ratio = row.max_error / row.envelope if row.envelope > 0 else 0.0
        row.extras = {'mu': sol.extras.get('mu'), 'iterations': sol.extras.get('iterations')}
        logger.debug(f"m={m}: 最大误差 {row.max_error:.3e}, 包络 {row.envelope:.3e}")
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(job, ladder))
    else:
        rows = [job(m) for m in ladder]

    done = [r.max_error for r in rows if r.ok and r.max_error > NOISE_FLOOR]
    self_error = reference.extras['self_error']
    if done and self_error > 0.1 * min(done):
        logger.warning(f"⚠️ 参照解误差 {self_error:.3e} 超过最小实验误差的 10%")
    for r in rows:
        r.extras['reference_error'] = self_error
    failed = sum(not r.ok for r in rows)
    if failed:
        logger.warning(f"⚠️ 收敛实验完成, {failed} 行失败")
    else:
        logger.info(f"✅ 收敛实验完成: {len(rows)} 行")
    return rows


def rate_fit(rows: Sequence[StudyRow]) -> Dict:
    """
    对每个误差列拟合 log(误差) ~ log(|Λ|) 的斜率
    Returns:
        {'slopes': {列: 斜率}, 'noise_floor': bool, 'rows': 参与拟合的行数}
    """
    ok = [r for r in rows if r.ok]
    if len(ok) < 3:
        raise ValueError(f"速率拟合至少需要 3 个成功的行, 实际 {len(ok)}")
    if max(r.max_error for r in ok) < NOISE_FLOOR:
        logger.info("误差处于数值噪声水平，不拟合斜率")
        return {'slopes': {c: math.nan for c in ERROR_COLUMNS}, 'noise_floor': True, 'rows': len(ok)}
    log_mesh = np.log([r.mesh for r in ok])
    slopes = {}
    for column in ERROR_COLUMNS:
        values = np.array([getattr(r, column) for r in ok])
        values = np.maximum(values, np.finfo(float).tiny)
        slopes[column] = float(np.polyfit(log_mesh, np.log(values), 1)[0])
    return {'slopes': slopes, 'noise_floor': False, 'rows': len(ok)}


def envelope_dominance(rows: Sequence[StudyRow], slack: float = 0.1) -> Dict:
    """
    包络控制：在较粗的一半行上拟合 C_fit = max(误差/包络)，较细的一半不得超过 (1+slack)·C_fit
    Returns:
        {'C_fit', 'violations', 'passed'}
    """
    ok = sorted((r for r in rows if r.ok), key=lambda r: r.m)
    if not ok:
        return {'C_fit': math.nan, 'violations': [], 'passed': False}
    positive = [r for r in ok if r.envelope > 0]
    if not positive:
        passed = all(r.max_error < NOISE_FLOOR for r in ok)
        return {'C_fit': 0.0, 'violations': [] if passed else [r.m for r in ok], 'passed': passed}
    half = max(1, len(positive) // 2)
    coarse, fine = positive[:half], positive[half:]
    c_fit = max(r.max_error / r.envelope for r in coarse)
    violations = [r.m for r in fine if r.max_error > (1 + slack) * c_fit * r.envelope + NOISE_FLOOR]
    if violations:
        logger.warning(f"⚠️ 包络控制失败: m={violations}")
    return {'C_fit': c_fit, 'violations': violations, 'passed': not violations}


def weak_vs_strong_report(rows: Sequence[StudyRow], spread_limit: float = 3.0,
                          strong_limit: float = STRONG_ERROR_LIMIT) -> Dict:
    """
    弱收敛预算（u_Λ 的 H¹(0,T;H) 范数一致有界）与强误差趋零并列报告
    Args:
        rows: 研究行
        spread_limit: H¹ 范数 max/min 的上限
        strong_limit: 最细网格上 MR₂(V,H) 误差的绝对上限
    """
    ok = sorted((r for r in rows if r.ok), key=lambda r: r.m)
    if not ok:
        return {'passed': False, 'detail': '没有成功的行'}
    h1 = [r.h1_H for r in ok]
    errors = [r.err_mr2_vh for r in ok]
    low = min(h1)
    spread = max(h1) / low if low > 0 else (1.0 if max(h1) == 0 else math.inf)
    bounded = spread < spread_limit
    vanishing = errors[-1] < strong_limit
    notes = []
    if not bounded:
        worst = ok[int(np.argmax(h1))]
        notes.append(f"m={worst.m} 的 H¹ 范数 {worst.h1_H:.4g} 超出一致界")
    if not vanishing:
        notes.append(f"最细网格 m={ok[-1].m} 的强误差 {errors[-1]:.4g} 未低于 {strong_limit:g}")
    return {
        'm': [r.m for r in ok],
        'h1_H': h1,
        'h1_spread': spread,
        'bounded': bounded,
        'strong_errors': errors,
        'strong_limit': strong_limit,
        'vanishing': vanishing,
        'passed': bounded and vanishing,
        'detail': '; '.join(notes),
    }


def uniformity_check(fp: FormPath, gamma: float, m: int, data_batch: Sequence[AffineDatum],
                     grid: Optional[TimeGrid] = None, method: str = 'at', spread_limit: float = 3.0,
                     profile: Optional[ModulusProfile] = None, substeps: int = ORACLE_SUBSTEPS) -> Dict:
    """
    数据一致性：误差按数据大小 ‖f‖_{L²(0,T;H)} + ‖u0‖_V 归一后除以包络，检查 max < spread_limit·median
    Returns:
        {'ratios', 'max', 'median', 'passed'}
    """
    if not data_batch:
        raise ValueError("数据批为空")
    profile = profile or measure_modulus(fp, gamma)
    grid = grid or TimeGrid.uniform(fp.horizon)
    afp = build_affine(fp, m)
    mesh = afp.subdivision.mesh
    env = EnvelopeSpec(gamma, profile).affine(mesh, _deviation(fp, afp, -gamma))
    solver, mu = None, None
    if method == 'at':
        solver = ATSolver(afp, grid)
        mu = solver.choose_mu()[0]

    ratios = []
    for datum in data_batch:
        ref = oracle_solve(fp, datum.source, datum.u0, grid, substeps=substeps)
        sol = _solve(afp, datum.source, datum.u0, grid, method, substeps, DEFAULT_MU_CAP,
                     NEUMANN_TOL, NEUMANN_MAX_ITER, solver=solver, mu=mu)
        err = solution_norms(fp.space, sol.difference(ref))['mr2_VH']
        size = datum.source_l2(fp.space, fp.horizon, 0.0) + datum.initial_norm(fp.space, 1.0)
        err = err / size if size > 0 else err
        ratios.append(err / env if env > 0 else err)
    ratios = np.asarray(ratios)
    top, median = float(np.max(ratios)), float(np.median(ratios))
    passed = top <= spread_limit * median if median > 0 else top < NOISE_FLOOR
    logger.info(f"{'✅' if passed else '⚠️'} 数据一致性: max={top:.4g}, median={median:.4g}")
    return {'ratios': ratios.tolist(), 'max': top, 'median': median, 'passed': passed}


def lions_ratio(fp: FormPath, data_batch: Sequence[AffineDatum], grid: Optional[TimeGrid] = None,
                substeps: int = ORACLE_SUBSTEPS) -> Dict:
    """先验估计 ‖u‖_{MR₂(V,V')} / (‖f‖_{L²(0,T;V')} + ‖u0‖_H) 在数据批上的取值"""
    grid = grid or TimeGrid.uniform(fp.horizon)
    sp = fp.space
    ratios = []
    for datum in data_batch:
        sol = oracle_solve(fp, datum.source, datum.u0, grid, substeps=substeps)
        size = datum.source_l2(sp, fp.horizon, -1.0) + datum.initial_norm(sp, 0.0)
        ratios.append(solution_norms(sp, sol)['mr2_VVp'] / size)
    return {'ratios': ratios, 'max': max(ratios), 'min': min(ratios)}


def vprime_stability(fp: FormPath, mesh_ladder: Sequence[int], data_batch: Sequence[AffineDatum],
                     grid: Optional[TimeGrid] = None, substeps: int = ORACLE_SUBSTEPS,
                     spread_limit: float = 5.0) -> Dict:
    """
    V' 中的稳定性：‖u_Λ - u‖_{MR₂(V,V')} / (d_Λ(V→V')·(‖f‖_{L²(0,T;V')} + ‖u0‖_H))
    每个 m 取数据批上的最大比值作为经验常数，常数在阶梯上的 max/min 应小于 spread_limit
    Returns:
        {'ratios', 'constants', 'max', 'min', 'spread', 'data_spread', 'passed'}
    """
    grid = grid or TimeGrid.uniform(fp.horizon)
    sp = fp.space
    refs = [oracle_solve(fp, d.source, d.u0, grid, substeps=substeps) for d in data_batch]
    sizes = [d.source_l2(sp, fp.horizon, -1.0) + d.initial_norm(sp, 0.0) for d in data_batch]
    per_m = {}
    for m in mesh_ladder:
        afp = build_affine(fp, m)
        d_one = _deviation(fp, afp, -1.0)
        if d_one == 0:
            continue
        row = []
        for datum, ref, size in zip(data_batch, refs, sizes):
            sol = oracle_solve(afp, datum.source, datum.u0, grid, substeps=substeps)
            err = solution_norms(sp, sol.difference(ref))['mr2_VVp']
            row.append(err / (d_one * size))
        per_m[int(m)] = row
    if not per_m:
        return {'ratios': {}, 'constants': {}, 'spread': 1.0, 'passed': True}
    constants = {m: max(row) for m, row in per_m.items()}
    ratios = [r for row in per_m.values() for r in row]
    low = min(constants.values())
    spread = max(constants.values()) / low if low > 0 else math.inf
    data_spread = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf
    passed = spread < spread_limit
    logger.info(f"{'✅' if passed else '⚠️'} V' 稳定性: 常数 max/min={spread:.3g}, 数据间 max/min={data_spread:.3g}")
    return {'ratios': per_m, 'constants': constants, 'max': max(ratios), 'min': min(ratios),
            'spread': spread, 'data_spread': data_spread, 'passed': passed}


def boundedness_lemma(fp: FormPath, mesh_ladder: Sequence[int], data_batch: Sequence[AffineDatum],
                      grid: Optional[TimeGrid] = None) -> Dict:
    """
    一致有界性（线性形式）：‖𝒜_Λ u_{Λ,1}‖_{L²(0,T;H)} ≤ c‖u0‖_V，‖𝒜_Λ u_{Λ,2}‖_{L²(0,T;H)} ≤ c‖f‖_{L²(0,T;H)}
    Returns:
        每个 m 的两个最大比值以及整个阶梯上的最大值
    """
    grid = grid or TimeGrid.uniform(fp.horizon)
    sp = fp.space
    weights = grid.trapezoid_weights()
    h_weight = scale_factor(sp, 0.0)

    def l2(values):
        return math.sqrt(float(np.sum(weights * np.linalg.norm(values @ h_weight.T, axis=1) ** 2)))

    per_m = {}
    for m in mesh_ladder:
        solver = ATSolver(build_affine(fp, m), grid)
        first, second = 0.0, 0.0
        for datum in data_batch:
            u1 = np.einsum('kij,kj->ki', solver.node_ops, solver.u1(datum.u0))
            u2 = np.einsum('kij,kj->ki', solver.node_ops, solver.u2(datum.source))
            size_0 = datum.initial_norm(sp, 1.0)
            size_f = datum.source_l2(sp, fp.horizon, 0.0)
            if size_0 > 0:
                first = max(first, l2(u1) / size_0)
            if size_f > 0:
                second = max(second, l2(u2) / size_f)
        per_m[int(m)] = {'initial': first, 'source': second}
    return {
        'per_m': per_m,
        'initial_max': max(v['initial'] for v in per_m.values()),
        'source_max': max(v['source'] for v in per_m.values()),
    }


def write_rows_csv(rows: Sequence[StudyRow], out: str):
    """写出研究 CSV（12 位有效数字）；有失败行时追加 status 列"""
    frame = pd.DataFrame([{c: getattr(r, c) for c in CSV_COLUMNS} for r in sorted(rows, key=lambda r: r.m)])
    frame = frame.reindex(columns=CSV_COLUMNS)
    if any(not r.ok for r in rows):
        frame['status'] = [r.status for r in sorted(rows, key=lambda r: r.m)]
    target = sys.stdout if out == '-' else out
    frame.to_csv(target, index=False, float_format='%.12g')
