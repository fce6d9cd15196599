"""
冻结时刻的扇形演算
预解式、半群值、围道表示，以及十条预解式/半群估计的数值检验
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg

from config import CONTOUR_POINTS, CONTOUR_RADIUS_CAP, LAMBDA_RADII, S_SAMPLES
from forms import EstimateReport, FormConstants, FormPath
from hilbert import SpacePair, h_realization, operator_norms

logger = logging.getLogger(__name__)


class SectorError(ValueError):
    """λ 落在扇形内、预解式奇异或平方根无定义"""


class ContourResolutionError(RuntimeError):
    """围道求积分辨率不足"""


@dataclass(frozen=True)
class SectorSpec:
    """
    扇形参数
    theta 为全纯角，谱位于半角 π/2 - θ 的闭扇形内；围道角 φ ∈ (π/2 - θ, π/2)
    contour_radius_cap 以 1/s 为单位：截断处 e^{-s·r·cos φ} = e^{-cap}
    """
    theta: float
    phi: float
    contour_radius_cap: float = CONTOUR_RADIUS_CAP
    contour_points: int = CONTOUR_POINTS

    def __post_init__(self):
        if not 0 < self.theta < math.pi / 2:
            raise ValueError(f"θ 必须在 (0, π/2) 内, 实际 {self.theta}")
        if not self.spectral_angle < self.phi < math.pi / 2:
            raise ValueError(f"围道角 φ={self.phi} 必须在 ({self.spectral_angle}, π/2) 内")
        if self.contour_points < 2:
            raise ValueError(f"围道点数至少为 2, 实际 {self.contour_points}")

    @property
    def spectral_angle(self) -> float:
        return math.pi / 2 - self.theta

    @classmethod
    def from_constants(cls, constants: FormConstants, sp: SpacePair, **kwargs) -> 'SectorSpec':
        """由结构常数构造；β 平移后的形式以 M + β·c_H² 为界"""
        bound = constants.M + constants.beta * sp.c_H ** 2
        theta = math.pi / 2 - math.atan(bound / constants.alpha)
        return cls(theta=theta, phi=math.pi / 2 - theta / 2, **kwargs)


def frozen_operator(sp: SpacePair, form_matrix: np.ndarray, beta: float = 0.0) -> np.ndarray:
    """β 平移后的 H 实现 G_H⁻¹(𝔸 + βG_H) = B + β"""
    return h_realization(sp, np.asarray(form_matrix, dtype=complex) + beta * sp.gram_H)


def spectral_sector_ok(lam: complex, spec: SectorSpec) -> bool:
    """λ 是否在谱扇形之外（|arg λ| ≥ π/2 - θ）"""
    if lam == 0:
        return False
    return abs(np.angle(lam)) >= spec.spectral_angle


def resolvent(sp: SpacePair, form_matrix: np.ndarray, lam: complex, spec: Optional[SectorSpec] = None,
              beta: float = 0.0, allow_inside: bool = False) -> np.ndarray:
    """
    预解式 (λ - B)⁻¹
    Args:
        sp: Hilbert 对
        form_matrix: 形式矩阵 𝔸
        lam: 复数 λ
        spec: 给定时检查 λ 不在扇形内（allow_inside=True 时跳过）
        beta: 平移量
    Returns:
        坐标矩阵，可按任意两个尺度加权求范数
    """
    if spec is not None and not allow_inside and not spectral_sector_ok(lam, spec):
        raise SectorError(f"λ={lam} 落在谱扇形内 (半角 {spec.spectral_angle:.4g})")
    op = frozen_operator(sp, form_matrix, beta)
    shifted = lam * np.eye(sp.dim) - op
    cond = np.linalg.cond(shifted)
    if not np.isfinite(cond) or cond > 1e14:
        raise SectorError(f"λ={lam} 时 λ - B 奇异 (条件数 {cond:.3e})")
    return np.linalg.solve(shifted, np.eye(sp.dim, dtype=complex))


def semigroup_value(sp: SpacePair, form_matrix: np.ndarray, s, beta: float = 0.0) -> np.ndarray:
    """
    半群值 e^{-sB}（Padé 缩放平方法）
    Args:
        s: 非负实数或非负实数数组（数组时返回形状 (len(s), N, N)）
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise ValueError(f"s 必须非负, 实际 {s}")
    op = frozen_operator(sp, form_matrix, beta)
    if s_arr.ndim == 0:
        return scipy.linalg.expm(-float(s_arr) * op)
    return scipy.linalg.expm(-s_arr[:, None, None] * op)


def _contour_vertex(eigenvalues: np.ndarray, phi: float) -> float:
    """顶点 λ₀ ≥ 0：谱整体落在 λ₀ + 半角 φ 的扇形内，取可行上限的一半"""
    margins = eigenvalues.real - np.abs(eigenvalues.imag) / math.tan(phi)
    return 0.5 * max(0.0, float(np.min(margins)))


def contour_check(sp: SpacePair, form_matrix: np.ndarray, s: float, spec: SectorSpec,
                  beta: float = 0.0, strict: bool = False) -> float:
    """
    围道表示 e^{-sB} = (1/2πi)∫_Γ e^{-sλ}(λ - B)⁻¹ dλ 的自检
    Γ = {λ₀ + r e^{±iφ}}，顶点 λ₀ 右移到谱的左侧；每条射线上 r = (κ/s)·exp(x - e^{-x})，x 方向等距梯形求积
    Args:
        s: 正实数
        spec: 扇形参数（角 φ、半径上限、点数）
        strict: 偏差超过 1e-6 时抛出 ContourResolutionError
    Returns:
        Frobenius 偏差除以 max(‖e^{-sB}‖, 被积函数的 L¹ 质量)
    """
    if s <= 0:
        raise ValueError(f"s 必须为正, 实际 {s}")
    op = frozen_operator(sp, form_matrix, beta)
    exact = scipy.linalg.expm(-s * op)
    phi = spec.phi
    eigenvalues = np.linalg.eigvals(op)
    vertex = _contour_vertex(eigenvalues, phi)
    smallest = float(np.min(np.abs(eigenvalues - vertex)))
    kappa = min(1.0, s * smallest) if smallest > 0 else 1.0
    per_ray = max(spec.contour_points // 2, 1)
    x_hi = math.log(spec.contour_radius_cap / (kappa * math.cos(phi)))
    xs, step = np.linspace(-3.6, x_hi, per_ray, retstep=True)
    radii = kappa / s * np.exp(xs - np.exp(-xs))
    weights = radii * (1 + np.exp(-xs)) * step
    weights[0] *= 0.5
    weights[-1] *= 0.5

    eye = np.eye(sp.dim)
    total = np.zeros((sp.dim, sp.dim), dtype=complex)
    mass = 0.0
    for sign in (-1, 1):
        direction = np.exp(sign * 1j * phi)
        lams = vertex + radii * direction
        res = np.linalg.solve(lams[:, None, None] * eye - op, np.broadcast_to(eye, (len(lams),) + eye.shape))
        factor = direction * np.exp(-s * lams) * weights
        total += -sign * np.einsum('k,kij->ij', factor, res)
        mass += float(np.sum(np.abs(factor) * np.linalg.norm(res, axis=(1, 2))))
    approx = total / (2j * math.pi)
    scale = max(float(np.linalg.norm(exact)), mass / (2 * math.pi), np.finfo(float).tiny)
    deviation = float(np.linalg.norm(approx - exact)) / scale

    if deviation > 1e-6:
        message = (f"围道求积偏差 {deviation:.3e} 超过 1e-6 (点数 {spec.contour_points}, "
                   f"半径上限 {spec.contour_radius_cap}/s)，建议增大 R 或点数")
        if strict:
            raise ContourResolutionError(message)
        logger.warning(f"⚠️ {message}")
    else:
        logger.debug(f"围道自检: s={s}, 偏差 {deviation:.3e}")
    return deviation


# 十条估计: (编号, 类型, 输入尺度, 输出尺度, 增长指数)；尺度中的 'g' 表示 γ
RESOLVENT_ITEMS = [
    (1, '-g', '0', lambda g: 1 - g / 2),
    (2, '1', '1', lambda g: 1.0),
    (3, '0', '1', lambda g: 0.5),
    (4, '-1', '0', lambda g: 0.5),
    (5, '-g', '1', lambda g: (1 - g) / 2),
]
SEMIGROUP_ITEMS = [
    (6, '-g', '0', lambda g: g / 2),
    (7, '-g', '1', lambda g: (1 + g) / 2),
    (8, '-1', '1', lambda g: 0.5),
    (9, '0', '0', lambda g: 1.0),
    (10, '1', '1', lambda g: 0.0),
]


def _scale(token: str, gamma: float) -> float:
    if token == '-g':
        return -gamma
    return float(token)


def _lambda_rays(spec: SectorSpec) -> Dict[str, float]:
    tilt = (spec.phi + math.pi) / 2
    return {'negative': math.pi, 'upper': tilt, 'lower': -tilt}


def _resolvent_sups(sp: SpacePair, ops: List[np.ndarray], gamma: float, spec: SectorSpec,
                    radii: np.ndarray) -> Dict[int, Dict[str, float]]:
    sups = {item[0]: {} for item in RESOLVENT_ITEMS}
    eye = np.eye(sp.dim)
    for ray, angle in _lambda_rays(spec).items():
        lams = radii * np.exp(1j * angle)
        stacks = []
        for op in ops:
            shifted = lams[:, None, None] * eye - op
            stacks.append(np.linalg.solve(shifted, np.broadcast_to(eye, shifted.shape)))
        res = np.concatenate(stacks)
        growth_base = np.tile(1 + np.abs(lams), len(ops))
        for number, in_tok, out_tok, power in RESOLVENT_ITEMS:
            norms = operator_norms(sp, res, _scale(in_tok, gamma), _scale(out_tok, gamma))
            sups[number][ray] = float(np.max(norms * growth_base ** power(gamma)))
    return sups


def _semigroup_sups(sp: SpacePair, ops: List[np.ndarray], gamma: float, s_grid: np.ndarray) -> Dict[int, float]:
    sups = {}
    values = np.concatenate([scipy.linalg.expm(-s_grid[:, None, None] * op) for op in ops])
    s_all = np.tile(s_grid, len(ops))
    op_all = np.repeat(np.stack(ops), len(s_grid), axis=0)
    for number, in_tok, out_tok, power in SEMIGROUP_ITEMS:
        target = op_all @ values if number == 9 else values
        norms = operator_norms(sp, target, _scale(in_tok, gamma), _scale(out_tok, gamma))
        sups[number] = float(np.max(norms * s_all ** power(gamma)))
    return sups


def _frozen_ops(path: FormPath, constants: FormConstants, times: Sequence[float]) -> List[np.ndarray]:
    return [frozen_operator(path.space, path.eval(t), constants.beta) for t in times]


def sector_constants(sp: SpacePair, paths: Sequence[FormPath], constants: FormConstants, spec: SectorSpec,
                     times: Sequence[float], lambda_samples: int = LAMBDA_RADII,
                     s_samples: int = S_SAMPLES) -> Dict[int, Dict]:
    """十条估计的经验常数（对所有路径与时刻取上确界）"""
    ops = [op for path in paths for op in _frozen_ops(path, constants, times)]
    radii = np.logspace(-2, 4, lambda_samples)
    s_grid = np.logspace(-4, 2, s_samples)
    gamma = constants.gamma
    result = {}
    for number, per_ray in _resolvent_sups(sp, ops, gamma, spec, radii).items():
        result[number] = {'sup': max(per_ray.values()), 'per_ray': per_ray}
    for number, sup in _semigroup_sups(sp, ops, gamma, s_grid).items():
        result[number] = {'sup': sup}
    return result


def verify_sector_estimates(sp: SpacePair, path: FormPath, constants: FormConstants, spec: SectorSpec,
                            lambda_samples: int = LAMBDA_RADII, s_samples: int = S_SAMPLES,
                            times: Optional[Sequence[float]] = None) -> List[EstimateReport]:
    """
    十条预解式/半群估计的数值检验
    Args:
        sp: Hilbert 对
        path: 形式路径或其仿射逼近
        constants: 结构常数（β 平移与 γ）
        spec: 扇形参数
        lambda_samples: 每条射线上的对数半径数
        s_samples: s 网格点数
        times: 冻结时刻，缺省取 0, T/2, T
    Returns:
        十个 EstimateReport；value 为经验常数，refined 为加密网格上的值
    """
    times = [0.0, path.horizon / 2, path.horizon] if times is None else list(times)
    logger.info(f"🔍 检验十条扇形估计: 时刻 {times}, γ={constants.gamma}")
    base = sector_constants(sp, [path], constants, spec, times, lambda_samples, s_samples)
    refined = sector_constants(sp, [path], constants, spec, times, 2 * lambda_samples - 1, 2 * s_samples - 1)

    reports = []
    for number in range(1, 11):
        value = base[number]['sup']
        fine = refined[number]['sup']
        stable = math.isfinite(fine) and fine <= 1.05 * value + 1e-300
        extras = {'item': number, 'refined': fine}
        if 'per_ray' in base[number]:
            extras['per_ray'] = base[number]['per_ray']
        reports.append(EstimateReport(
            name=f"sector_item_{number}",
            passed=math.isfinite(value) and stable,
            value=value,
            detail=f"经验常数 {value:.6g}, 加密网格 {fine:.6g}",
            extras=extras,
        ))
    failed = [r.name for r in reports if not r.passed]
    if failed:
        logger.warning(f"⚠️ 扇形估计不稳定: {failed}")
    else:
        logger.info("✅ 十条扇形估计均有限且对加密稳定")
    return reports


def sector_uniformity(sp: SpacePair, paths: Sequence[FormPath], constants: FormConstants, spec: SectorSpec,
                      times: Sequence[float]) -> Dict[int, Dict[str, float]]:
    """
    经验常数对 (t, n) 的一致性
    Returns:
        item -> {'joint': 联合上确界, 'fixed': 第一条路径在首个时刻的值, 'factor': 二者之比}
    """
    joint = sector_constants(sp, paths, constants, spec, times)
    fixed = sector_constants(sp, paths[:1], constants, spec, list(times)[:1])
    summary = {}
    for number in range(1, 11):
        j, f = joint[number]['sup'], fixed[number]['sup']
        summary[number] = {'joint': j, 'fixed': f, 'factor': j / f if f > 0 else math.inf}
    return summary
