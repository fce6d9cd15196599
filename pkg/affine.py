"""
仿射时间逼近 a_Λ
均匀剖分上的区间平均 𝔸_k、仿射插值、连续模 ω_Λ、偏差 d_Λ 以及相关界的数值检验
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from config import AFFINE_QUAD_ORDER
from forms import EstimateReport, FormConstants, FormPath, ModulusProfile, measure_modulus
from hilbert import form_operator_norms, scale_factor, scale_factor_inv
from semigroup import SectorError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Subdivision:
    """[0, T] 的均匀剖分 λ_k = k·T/m"""
    horizon: float
    intervals: int

    def __post_init__(self):
        if self.intervals < 1:
            raise ValueError(f"区间数必须为正, 实际 {self.intervals}")
        if self.horizon <= 0:
            raise ValueError(f"T 必须为正, 实际 {self.horizon}")

    @property
    def mesh(self) -> float:
        return self.horizon / self.intervals

    @property
    def knots(self) -> np.ndarray:
        knots = np.arange(self.intervals + 1) * self.mesh
        knots[-1] = self.horizon
        return knots


@dataclass(frozen=True)
class AffineFormPath(FormPath):
    """a_Λ：区间 [λ_k, λ_{k+1}] 上 ((λ_{k+1}-t)𝔸_k + (t-λ_k)𝔸_{k+1})/|Λ|"""
    base: Optional[FormPath] = None
    subdivision: Optional[Subdivision] = None
    averages: Optional[np.ndarray] = None
    quadrature_order: int = AFFINE_QUAD_ORDER

    def eval_many(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if np.any(times < -1e-14 * self.horizon):
            raise ValueError(f"时间不在 [0, {self.horizon}] 内")
        times = np.clip(times, 0.0, self.horizon)
        m, h = self.subdivision.intervals, self.subdivision.mesh
        k = np.minimum(np.floor(times / h).astype(int), m - 1)
        left = k * h
        right = np.where(k + 1 == m, self.horizon, (k + 1) * h)
        blend = ((right - times)[:, None, None] * self.averages[k]
                 + (times - left)[:, None, None] * self.averages[k + 1])
        return blend / h

    def dini_certificate(self, profile: ModulusProfile) -> Dict[str, float]:
        """由原路径连续模给出 ω_Λ 的 Dini 积分、上确界比与 [0, |Λ|] 上的尾积分"""
        mesh = self.subdivision.mesh
        dini, sup = omega_Lambda_dini(profile, mesh)
        return {'dini': dini, 'sup': sup, 'tail': omega_Lambda_tail(profile, mesh)}


def build_affine(fp: FormPath, m: int, quad_order: int = AFFINE_QUAD_ORDER) -> AffineFormPath:
    """
    构造仿射逼近
    Args:
        fp: 原形式路径
        m: 区间数
        quad_order: 每个区间的 Gauss-Legendre 阶数
    Returns:
        AffineFormPath，末尾的虚拟平均 𝔸_m 取常数延拓 𝔸(T)
    """
    if quad_order < 1:
        raise ValueError(f"求积阶数必须为正, 实际 {quad_order}")
    sub = Subdivision(fp.horizon, int(m))
    if fp.is_autonomous:
        # 自治路径的区间平均精确等于 𝔸
        averages = np.repeat(fp.eval(0.0)[None], sub.intervals + 1, axis=0)
    else:
        knots = sub.knots
        nodes, weights = np.polynomial.legendre.leggauss(quad_order)
        mids = 0.5 * (knots[:-1] + knots[1:])
        halves = 0.5 * (knots[1:] - knots[:-1])
        points = (mids[:, None] + halves[:, None] * nodes[None, :]).ravel()
        values = fp.eval_many(points).reshape(sub.intervals, quad_order, fp.space.dim, fp.space.dim)
        averages = np.einsum('q,kqij->kij', weights / 2, values)
        averages = np.concatenate([averages, fp.eval(fp.horizon)[None]], axis=0)

    afp = AffineFormPath(
        space=fp.space,
        horizon=fp.horizon,
        evaluator=lambda t: afp.eval_many([t])[0],
        descriptor={**fp.descriptor, 'affine_intervals': sub.intervals},
        base=fp,
        subdivision=sub,
        averages=averages,
        quadrature_order=quad_order,
    )
    logger.debug(f"构造仿射逼近: m={m}, |Λ|={sub.mesh:.4g}, Gauss 阶数 {quad_order}")
    return afp


def omega_Lambda(profile: ModulusProfile, mesh: float, t: float) -> float:
    """ω_Λ(t) = (t/|Λ|)·ω(4|Λ|)（t ≤ 2|Λ|），否则 2ω(2t)"""
    if mesh <= 0:
        raise ValueError(f"网格尺寸必须为正, 实际 {mesh}")
    if t < 0 or t > profile.horizon * (1 + 1e-12):
        raise ValueError(f"t={t} 不在 [0, {profile.horizon}] 内")
    if t <= 2 * mesh:
        return t / mesh * profile.omega(4 * mesh)
    return 2 * profile.omega(2 * t)


def d_Lambda(profile: ModulusProfile, mesh: float) -> float:
    """偏差界 2ω(2|Λ|)"""
    if mesh <= 0:
        raise ValueError(f"网格尺寸必须为正, 实际 {mesh}")
    return 2 * profile.omega(2 * mesh)


def omega_Lambda_tail(profile: ModulusProfile, mesh: float, upper: Optional[float] = None) -> float:
    """∫₀^upper ω_Λ(t)/t^{1+γ/2} dt，upper ≤ 2|Λ|（缺省为 |Λ|），此段上 ω_Λ 为线性"""
    if mesh <= 0:
        raise ValueError(f"网格尺寸必须为正, 实际 {mesh}")
    upper = mesh if upper is None else float(upper)
    if upper < 0 or upper > 2 * mesh * (1 + 1e-12):
        raise ValueError(f"upper={upper} 不在 [0, 2|Λ|] 内")
    g = profile.gamma / 2
    return profile.omega(4 * mesh) / mesh * upper ** (1 - g) / (1 - g)


def omega_Lambda_dini(
profile: ModulusProfile, mesh: float) -> Tuple[float, float]:
    """
    ω_Λ 的 Dini 积分与上确界比（在 2|Λ| 处分段）
    Returns:
        (∫₀ᵀ ω_Λ(t)/t^{1+γ/2} dt, sup ω_Λ(t)/t^{γ/2})
    """
    if mesh <= 0:
        raise ValueError(f"网格尺寸必须为正, 实际 {mesh}")
    T, g = profile.horizon, profile.gamma / 2
    top = profile.omega(4 * mesh)
    first_end = min(2 * mesh, T)
    dini = top / mesh * first_end ** (1 - g) / (1 - g)
    sup = top / mesh * first_end ** (1 - g)
    if T > 2 * mesh:
        # r = 2t 代换后为 2^{1+g}∫_{4|Λ|}^{2T} ω(r)/r^{1+g} dr，r ≥ T 时 ω(r) = ω(T)
        inner = profile.dini_tail(T) - profile.dini_tail(4 * mesh) if 4 * mesh < T else 0.0
        lo = max(4 * mesh, T)
        if g == 0:
            outer = profile.omega(T) * math.log(2 * T / lo)
        else:
            outer = profile.omega(T) * (lo ** -g - (2 * T) ** -g) / g
        dini += 2 ** (1 + g) * (inner + outer)
        sup = max(sup, 2 ** (1 + g) * profile.sup_ratio)
    return dini, sup


def verify_affine_bounds(fp: FormPath, afp: AffineFormPath, gamma: float, pair_samples: int = 200,
                         profile: Optional[ModulusProfile] = None) -> EstimateReport:
    """
    检验 ‖𝒜_Λ(t)-𝒜_Λ(s)‖ ≤ ω_Λ(|t-s|)、‖𝒜_Λ(t)-𝒜(t)‖ ≤ d_Λ 与 ‖𝒜_Λ(t)-𝒜(0)‖ ≤ 2ω(T)
    Args:
        fp: 原形式路径
        afp: 仿射逼近
        gamma: 尺度指标
        pair_samples: 每个方向的采样数（共 pair_samples² 对）
        profile: fp 的连续模（缺省时现场测量）
    Returns:
        EstimateReport，value 为三个比值中的最大者
    """
    profile = profile or measure_modulus(fp, gamma)
    sp, T = fp.space, fp.horizon
    mesh = afp.subdivision.mesh
    times = np.linspace(0.0, T, pair_samples)
    stack = afp.eval_many(times)
    base = fp.eval_many(times)
    scale = max(float(np.max(form_operator_norms(sp, base, -1.0))), 1.0)
    atol = 1e-12 * scale
    slack = 1 + 1e-6

    def ratio(measured, bound):
        if bound > 0:
            return measured / bound
        return 0.0 if measured <= atol else math.inf

    # 成对差：逐行计算上三角
    pair_ratio, witness, passed = 0.0, None, True
    for i in range(pair_samples - 1):
        norms = form_operator_norms(sp, stack[i + 1:] - stack[i], -gamma)
        for j, measured in enumerate(norms, start=i + 1):
            bound = omega_Lambda(profile, mesh, min(times[j] - times[i], T))
            r = ratio(measured, bound)
            if r > pair_ratio:
                pair_ratio = r
            if measured > bound * slack + atol and passed:
                passed = False
                witness = {'t': float(times[j]), 's': float(times[i]), 'measured': float(measured), 'bound': bound}

    pair_ratio = float(pair_ratio)
    bound_d = d_Lambda(profile, mesh)
    deviations = form_operator_norms(sp, stack - base, -gamma)
    dev_ratio = float(max(ratio(float(d), bound_d) for d in deviations))
    worst = int(np.argmax(deviations))
    if deviations[worst] > bound_d * slack + atol and passed:
        passed = False
        witness = {'t': float(times[worst]), 'measured': float(deviations[worst]), 'bound': bound_d}

    bound_0 = 2 * profile.omega(T)
    drift = form_operator_norms(sp, stack - fp.eval(0.0), -gamma)
    drift_ratio = float(max(ratio(float(d), bound_0) for d in drift))
    if float(np.max(drift)) > bound_0 * slack + atol and passed:
        passed = False
        worst = int(np.argmax(drift))
        witness = {'t': float(times[worst]), 'measured': float(drift[worst]), 'bound': bound_0}

    value = float(max(pair_ratio, dev_ratio, drift_ratio))
    if passed:
        logger.info(f"✅ 仿射界检验通过: m={afp.subdivision.intervals}, 最大比值 {value:.4g}")
    else:
        logger.warning(f"❌ 仿射界检验失败: m={afp.subdivision.intervals}, 见证 {witness}")
    return EstimateReport(
        name=f"affine_bounds[m={afp.subdivision.intervals}]",
        passed=passed,
        value=value,
        detail=f"ω_Λ 比值 {pair_ratio:.6g}, d_Λ 比值 {dev_ratio:.6g}, 2ω(T) 比值 {drift_ratio:.6g}",
        witness=witness,
        extras={'omega_ratio': pair_ratio, 'deviation_ratio': dev_ratio, 'drift_ratio': drift_ratio,
                'd_lambda': bound_d},
    )


def sqrt_property_constants(path: FormPath, t_grid: Sequence[float],
                            constants: Optional[FormConstants] = None) -> Tuple[float, float]:
    """
    平方根性质的定量常数 lower·‖u‖_V ≤ ‖B(t)^{1/2}u‖_H ≤ upper·‖u‖_V
    Args:
        path: 形式路径或其仿射逼近
        t_grid: 采样时刻
        constants: 结构常数，B(t) 使用 β 平移后的 G_H⁻¹(𝔸 + βG_H)
    Returns:
        (lower, upper)
    """
    sp = path.space
    beta = constants.beta if constants is not None else 0.0
    left = scale_factor(sp, 0.0)
    right = scale_factor_inv(sp, 1.0)
    lower, upper = math.inf, 0.0
    for t in t_grid:
        shifted = path.eval(t) + beta * sp.gram_H
        op = scipy.linalg.solve(sp.gram_H, shifted, assume_a='pos')
        eigs = np.linalg.eigvals(op)
        scale = max(float(np.max(np.abs(eigs))), np.finfo(float).tiny)
        bad = (eigs.real <= 0) & (np.abs(eigs.imag) <= 1e-12 * scale)
        if np.any(bad):
            raise SectorError(f"t={t} 时 B(t) 在闭负实轴上有特征值 {eigs[bad][0]:.4g}，平方根无定义")
        root = scipy.linalg.sqrtm(op)
        singular = np.linalg.svd(left @ root @ right, compute_uv=False)
        lower = min(lower, float(singular[-1]))
        upper = max(upper, float(singular[0]))
    return lower, upper
