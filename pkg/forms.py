"""
非自治形式路径
时间相关的半双线性形式 t ↦ 𝔸(t)、结构常数 (M, α, β)、连续模 ω 与假设 (H0)-(H6) 检查
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import VANISHING_SLOPE
from hilbert import SpacePair, form_operator_norms, scale_factor_inv

logger = logging.getLogger(__name__)


class CoercivityError(ValueError):
    """在采样点上不满足一致拟强制性"""


class HypothesisError(ValueError):
    """假设前提不成立（空间/时间区间不一致，或研究前置检查失败）"""


@dataclass(frozen=True)
class FormPath:
    """形式路径数据类：𝔸(t) 在 [0, T] 上定义，T 之后按 𝔸(T) 常数延拓"""
    space: SpacePair
    horizon: float
    evaluator: Callable[[float], np.ndarray]
    descriptor: Dict = field(default_factory=dict)

    def eval(self, t: float) -> np.ndarray:
        if t < -1e-14 * self.horizon:
            raise ValueError(f"时间 t={t} 不在 [0, {self.horizon}] 内")
        t = min(max(float(t), 0.0), self.horizon)
        return np.asarray(self.evaluator(t), dtype=complex)

    def eval_many(self, times) -> np.ndarray:
        """批量求值，返回形状 (len(times), N, N)"""
        return np.stack([self.eval(t) for t in np.asarray(times, dtype=float)])

    @property
    def is_autonomous(self) -> bool:
        return bool(self.descriptor.get('autonomous', False))


@dataclass(frozen=True)
class FormConstants:
    """结构常数：|a| ≤ M‖u‖_V‖v‖_V，Re a + β‖u‖²_H ≥ α‖u‖²_V"""
    M: float
    alpha: float
    beta: float
    gamma: float
    theta: float

    def to_dict(self) -> Dict:
        return {'M': self.M, 'alpha': self.alpha, 'beta': self.beta,
                'gamma': self.gamma, 'theta': self.theta}


@dataclass(frozen=True)
class PowerModel:
    """幂律连续模 ω(t) = C·t^η"""
    C: float
    eta: float


@dataclass(frozen=True)
class TableModel:
    """表格连续模：deltas 升序，values 非降"""
    deltas: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class ModulusProfile:
    """
    连续模概况
    ω 在 [0, 2T] 上有定义（t ≥ T 时取 ω(T)）；表格存在时按上阶梯取值，
    最小网格点以下用拟合幂律或线性外推
    """
    gamma: float
    horizon: float
    fit: Optional[PowerModel]
    table: Optional[TableModel]
    dini_integral: float
    sup_ratio: float
    vanishing_ratio: bool

    @classmethod
    def power(cls, C: float, eta: float, gamma: float, horizon: float) -> 'ModulusProfile':
        """直接由幂律参数构造"""
        model = PowerModel(float(C), float(eta))
        dini, sup = dini_quantities(model, gamma, horizon)
        return cls(gamma=gamma, horizon=horizon, fit=model, table=None,
                   dini_integral=dini, sup_ratio=sup,
                   vanishing_ratio=(C == 0 or eta > gamma / 2))

    @property
    def model(self) -> Union[PowerModel, TableModel]:
        return self.fit if self.fit is not None else self.table

    @property
    def dini_finite(self) -> bool:
        return math.isfinite(self.dini_integral) and math.isfinite(self.sup_ratio)

    def omega(self, t: float) -> float:
        if t < 0:
            raise ValueError(f"连续模的自变量必须非负, 实际 {t}")
        t = min(float(t), self.horizon)
        if self.table is None:
            return _power_value(self.fit, t)
        deltas, values = self.table.deltas, self.table.values
        if t < deltas[0]:
            if self.fit is not None:
                return min(_power_value(self.fit, t), float(values[0]))
            return float(values[0]) * t / deltas[0]
        idx = min(int(np.searchsorted(deltas, t, side='left')), len(deltas) - 1)
        return float(values[idx])

    def dini_tail(self, upper: float) -> float:
        """∫₀^upper ω(r)/r^{1+γ/2} dr，按 omega() 的同一模型积分"""
        upper = min(float(upper), self.horizon)
        if upper <= 0:
            return 0.0
        g = self.gamma / 2
        if self.table is None:
            return dini_quantities(self.fit, self.gamma, upper)[0]
        return _table_dini(self.table, g, upper, self.fit)


def _power_value(model: PowerModel, t: float) -> float:
    if model.C == 0:
        return 0.0
    return model.C * t ** model.eta if t > 0 else 0.0


def _log_ratio_integral(a: float, b: float, g: float) -> float:
    """∫_a^b r^{-1-g} dr"""
    if g == 0:
        return math.log(b / a)
    return (a ** -g - b ** -g) / g


def _table_dini(table: TableModel, g: float, upper: float, fit: Optional[PowerModel]) -> float:
    deltas, values = table.deltas, table.values
    d0, v0 = float(deltas[0]), float(values[0])
    low = min(upper, d0)
    if v0 == 0:
        total = 0.0
    elif fit is not None:
        total = dini_quantities(fit, 2 * g, low)[0]
    else:
        total = v0 / d0 * low ** (1 - g) / (1 - g)
    prev = d0
    for d, v in zip(deltas[1:], values[1:]):
        if prev >= upper:
            break
        hi = min(float(d), upper)
        if v > 0:
            total += float(v) * _log_ratio_integral(prev, hi, g)
        prev = hi
    return total


def _table_sup(table: TableModel, g: float) -> float:
    deltas, values = table.deltas, table.values
    ratios = [values[0] / deltas[0] ** g]
    ratios += [v / d ** g for d, v in zip(deltas[:-1], values[1:])]
    return float(max(ratios))


def dini_quantities(model: Union[PowerModel, TableModel], gamma: float,
                    horizon: float) -> Tuple[float, float]:
    """
    Dini 积分与上确界比
    Args:
        model: 幂律或表格模型
        gamma: 尺度指标 γ ∈ [0, 1)
        horizon: 积分上限 T
    Returns:
        (∫₀ᵀ ω(t)/t^{1+γ/2} dt, sup_{t≤T} ω(t)/t^{γ/2})；发散时为 inf
    """
    if not 0 <= gamma < 1:
        raise ValueError(f"γ 必须在 [0, 1) 内, 实际 {gamma}")
    g = gamma / 2
    if isinstance(model, TableModel):
        if not np.any(model.values > 0):
            return 0.0, 0.0
        return _table_dini(model, g, horizon, None), _table_sup(model, g)

    if model.C == 0:
        return 0.0, 0.0
    excess = model.eta - g
    dini = model.C * horizon ** excess / excess if excess > 0 else math.inf
    sup = model.C * horizon ** excess if excess >= 0 else math.inf
    return dini, sup


def _v_weight(sp: SpacePair) -> np.ndarray:
    return scale_factor_inv(sp, 1.0)


def estimate_constants(fp: FormPath, t_samples: int = 64, trial_beta_cap: float = 64.0,
                       gamma: float = 0.0) -> FormConstants:
    """
    估计结构常数
    Args:
        fp: 形式路径
        t_samples: [0, T] 上的均匀采样数
        trial_beta_cap: β 阶梯 0, 1, 2, 4, … 的上限
        gamma: 记录在常数中的尺度指标
    Returns:
        FormConstants，α 已乘 (1 - 1e-6) 的安全系数
    """
    if t_samples < 2:
        raise ValueError(f"t_samples 至少为 2, 实际 {t_samples}")
    sp = fp.space
    stack = fp.eval_many(np.linspace(0.0, fp.horizon, t_samples))
    M = float(np.max(form_operator_norms(sp, stack, -1.0)))

    right = _v_weight(sp)
    herm = 0.5 * (stack + np.conj(np.swapaxes(stack, -1, -2)))
    weighted = right.conj().T @ herm @ right
    h_weight = 1.0 / sp.scale_eigs  # F₁^{-*} G_H F₁⁻¹ = diag(1/s)

    ladder = [0.0]
    beta = 1.0
    while beta <= trial_beta_cap:
        ladder.append(beta)
        beta *= 2

    for beta in ladder:
        shifted = weighted + beta * np.diag(h_weight)
        alpha_beta = float(np.min(np.linalg.eigvalsh(shifted)[..., 0]))
        logger.debug(f"β={beta:g}: α(β)={alpha_beta:.6g}")
        if alpha_beta > 0:
            alpha = alpha_beta * (1 - 1e-6)
            theta = math.pi / 2 - math.atan(M / alpha)
            logger.info(f"✅ 结构常数: M={M:.6g}, α={alpha:.6g}, β={beta:g}, θ={theta:.6g}")
            return FormConstants(M=M, alpha=alpha, beta=beta, gamma=gamma, theta=theta)

    raise CoercivityError(f"not uniformly quasi-coercive on sample: β ≤ {trial_beta_cap:g} 均不满足 α > 0")


def check_form_bounds(fp: FormPath, constants: FormConstants, samples: int = 1000,
                      seed: int = 0) -> Dict:
    """
    在随机 (t, u, v) 上复核常数
    Returns:
        {'bound_ratio': max |a|/(M‖u‖_V‖v‖_V), 'coercivity_margin': min (Re a + β‖u‖²_H)/(α‖u‖²_V)}
    """
    sp = fp.space
    rng = np.random.default_rng(seed)
    times = rng.uniform(0.0, fp.horizon, samples)
    stack = fp.eval_many(times)
    n = sp.dim
    u = rng.standard_normal((samples, n)) + 1j * rng.standard_normal((samples, n))
    v = rng.standard_normal((samples, n)) + 1j * rng.standard_normal((samples, n))

    def quad(x, mat, y):
        return np.einsum('ki,kij,kj->k', y.conj(), mat, x)

    gram_V = np.broadcast_to(sp.gram_V, stack.shape)
    gram_H = np.broadcast_to(sp.gram_H, stack.shape)
    norm_u = np.sqrt(quad(u, gram_V, u).real)
    norm_v = np.sqrt(quad(v, gram_V, v).real)
    bound_ratio = np.abs(quad(u, stack, v)) / (constants.M * norm_u * norm_v)
    coercive = quad(u, stack, u).real + constants.beta * quad(u, gram_H, u).real
    margin = coercive / (constants.alpha * norm_u ** 2)
    return {'bound_ratio': float(np.max(bound_ratio)), 'coercivity_margin': float(np.min(margin))}


def _default_delta_grid(horizon: float) -> np.ndarray:
    return horizon * np.logspace(-4, 0, 17)


def measure_modulus(fp: FormPath, gamma: float, delta_grid: Optional[Sequence[float]] = None,
                    t_points: int = 33) -> ModulusProfile:
    """
    测量连续模 ω̂(δ) = max_{|t-s|≤δ} ‖𝔸(t) - 𝔸(s)‖_{L(V, V'_γ)}
    Args:
        fp: 形式路径
        gamma: 尺度指标
        delta_grid: 升序正数网格，最大值不超过 T（T 自动补入）
        t_points: 每个 δ 上的起点采样数（包含 t=0）
    Returns:
        ModulusProfile（累计最大值表 + 对数坐标幂律拟合）
    """
    if not 0 <= gamma < 1:
        raise ValueError(f"γ 必须在 [0, 1) 内, 实际 {gamma}")
    T = fp.horizon
    deltas = _default_delta_grid(T) if delta_grid is None else np.asarray(delta_grid, dtype=float)
    if deltas.ndim != 1 or len(deltas) == 0 or np.any(deltas <= 0) or np.any(np.diff(deltas) <= 0):
        raise ValueError("delta_grid 必须是严格升序的正数序列")
    if deltas[-1] > T * (1 + 1e-12):
        raise ValueError(f"delta_grid 的最大值 {deltas[-1]} 超过 T={T}")
    if deltas[-1] < T * (1 - 1e-12):
        deltas = np.append(deltas, T)
    deltas[-1] = min(deltas[-1], T)

    raw = np.empty(len(deltas))
    for j, delta in enumerate(deltas):
        starts = np.linspace(0.0, T - delta, t_points)
        diff = fp.eval_many(starts + delta) - fp.eval_many(starts)
        raw[j] = float(np.max(form_operator_norms(fp.space, diff, -gamma)))
    values = np.maximum.accumulate(raw)
    table = TableModel(deltas=deltas, values=values)

    fit = None
    positive = values > 0
    if len(deltas) >= 3 and np.count_nonzero(positive) >= 3:
        slope, intercept = np.polyfit(np.log(deltas[positive]), np.log(values[positive]), 1)
        fit = PowerModel(C=float(np.exp(intercept)), eta=float(slope))
    elif len(deltas) < 3:
        logger.warning(f"⚠️ δ 网格只有 {len(deltas)} 个点，省略幂律拟合")

    if fit is not None:
        dini, sup = dini_quantities(fit, gamma, T)
        vanishing = fit.eta > gamma / 2
    else:
        dini, sup = dini_quantities(table, gamma, T)
        vanishing = not np.any(positive)

    logger.debug(f"连续模: ω̂(T)={values[-1]:.4g}, 拟合={fit}, Dini={dini:.4g}, sup={sup:.4g}")
    return ModulusProfile(gamma=gamma, horizon=T, fit=fit, table=table,
                          dini_integral=dini, sup_ratio=sup, vanishing_ratio=vanishing)


@dataclass
class HypothesisResult:
    """单条假设的检查结果"""
    name: str
    status: str  # 'pass' | 'fail' | 'assumed'
    detail: str

    @property
    def passed(self) -> bool:
        return self.status != 'fail'


@dataclass
class HypothesisReport:
    """假设检查报告，含测得的序列"""
    results: Dict[str, HypothesisResult]
    sequences: Dict[str, List[float]]
    ordering_ok: bool

    @property
    def all_passed(self) -> bool:
        return self.ordering_ok and all(r.passed for r in self.results.values())

    def to_dict(self) -> Dict:
        return {
            'hypotheses': {k: {'status': r.status, 'detail': r.detail} for k, r in self.results.items()},
            'sequences': self.sequences,
            'ordering_ok': self.ordering_ok,
            'passed': self.all_passed,
        }


def _same_space(a: SpacePair, b: SpacePair) -> bool:
    if a is b:
        return True
    return a.dim == b.dim and np.allclose(a.gram_H, b.gram_H) and np.allclose(a.gram_V, b.gram_V)


def _decay_slope(seq: Sequence[float], ns: Sequence[int]) -> Optional[float]:
    """正项在对数坐标下对 n 的拟合斜率，少于两个不同的 n 时为 None"""
    values = np.asarray(seq, dtype=float)
    n = np.asarray(ns, dtype=float)
    positive = values > 0
    if len(set(n[positive])) < 2:
        return None
    return float(np.polyfit(np.log(n[positive]), np.log(values[positive]), 1)[0])


def _vanishing(seq: Sequence[float], ns: Sequence[int]) -> bool:
    """序列随 n 趋于零：全为零，末项为零，或对数斜率显著为负"""
    if not all(math.isfinite(x) for x in seq):
        return False
    if max(seq) == 0 or seq[-1] == 0:
        return True
    slope = _decay_slope(seq, ns)
    return slope is not None and slope < -VANISHING_SLOPE and seq[-1] < seq[0]


def _non_increasing(seq: List[float]) -> bool:
    return all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(seq, seq[1:]))


def check_hypotheses(fp: FormPath, seq: Sequence[FormPath], gamma: float,
                     t_points: int = 65, delta_grid: Optional[Sequence[float]] = None,
                     base_profile: Optional[ModulusProfile] = None) -> HypothesisReport:
    """
    检查逼近序列的假设 (H0)-(H6)
    Args:
        fp: 原形式路径
        seq: 逼近序列（仿射逼近时 n 取区间数）
        gamma: 尺度指标
        t_points: d_n 的时间采样数
        delta_grid: 连续模测量网格
        base_profile: 已测得的原路径连续模（缺省时现场测量）
    Returns:
        HypothesisReport
    """
    if not seq:
        raise HypothesisError("逼近序列为空")
    for k, member in enumerate(seq):
        if not _same_space(member.space, fp.space):
            raise HypothesisError(f"序列第 {k} 项的 Hilbert 对与原路径不同")
        if abs(member.horizon - fp.horizon) > 1e-12 * fp.horizon:
            raise HypothesisError(f"序列第 {k} 项的时间区间 {member.horizon} 与 T={fp.horizon} 不同")

    sp, T = fp.space, fp.horizon
    logger.info(f"🔍 检查假设: 序列长度 {len(seq)}, γ={gamma}")
    ns = [int(getattr(getattr(m, 'subdivision', None), 'intervals', k + 1)) for k, m in enumerate(seq)]
    times = np.linspace(0.0, T, t_points)
    base = fp.eval_many(times)
    base_profile = base_profile or measure_modulus(fp, gamma, delta_grid)

    d_gamma, d_one, ordering_ok = [], [], True
    dominance = max(1.0, sp.c_H ** (1 - gamma))
    profiles = []
    for member in seq:
        diff = member.eval_many(times) - base
        norms_gamma = form_operator_norms(sp, diff, -gamma)
        norms_one = form_operator_norms(sp, diff, -1.0)
        if np.any(norms_one > dominance * norms_gamma * (1 + 1e-9) + 1e-14):
            ordering_ok = False
        d_gamma.append(float(np.max(norms_gamma)))
        d_one.append(float(np.max(norms_one)))
        profiles.append(measure_modulus(member, gamma, delta_grid))

    products = [d * n ** (gamma / 2) for d, n in zip(d_gamma, ns)]
    tails = [p.dini_tail(T / n) for p, n in zip(profiles, ns)]
    dinis = [p.dini_integral for p in profiles]
    sups = [p.sup_ratio for p in profiles]

    # 仿射族由原路径的连续模给出 ω_Λ 的一致界
    affine_family = all(getattr(m, 'base', None) is fp and hasattr(m, 'dini_certificate') for m in seq)
    certificates = [m.dini_certificate(base_profile) for m in seq] if affine_family else []

    results = {}
    results['H0'] = HypothesisResult(
        'H0', 'pass' if _vanishing(d_one, ns) else 'fail', f"d_n(V→V') = {d_one}")
    results['H1'] = HypothesisResult(
        'H1', 'pass' if _vanishing(d_gamma, ns) else 'fail', f"d_n(V→V'_γ) = {d_gamma}")

    h2_ok = True
    for p in profiles:
        top = p.omega(T)
        if not math.isfinite(top) or (top > 0 and p.omega(p.table.deltas[0]) > 0.5 * top):
            h2_ok = False
    results['H2'] = HypothesisResult('H2', 'pass' if h2_ok else 'fail', f"ω_n(T) = {[p.omega(T) for p in profiles]}")

    certified = [c[key] for c in certificates for key in ('dini', 'sup')]
    h3_ok = base_profile.dini_finite and all(math.isfinite(x) for x in dinis + sups + certified)
    detail = f"原路径 Dini={base_profile.dini_integral:.6g}, sup={base_profile.sup_ratio:.6g}; 序列 Dini={dinis}"
    if certificates:
        detail += f"; ω_Λ Dini 界={[c['dini'] for c in certificates]}"
    results['H3'] = HypothesisResult('H3', 'pass' if h3_ok else 'fail', detail)
    results['H4'] = HypothesisResult(
        'H4', 'assumed', "assumed: finite-dimensional problems always possess L²-maximal regularity")

    h5_ok = max(d_gamma) == 0 or (_non_increasing(d_gamma) and _vanishing(products, ns))
    results['H5'] = HypothesisResult('H5', 'pass' if h5_ok else 'fail', f"d_n·n^(γ/2) = {products}")

    if certificates:
        # ∫₀^{|Λ|} ω_Λ/r^{1+γ/2} = ω(4|Λ|)|Λ|^{-γ/2}/(1-γ/2) → 0 当且仅当 ω(r)/r^{γ/2} → 0
        certified_tails = [c['tail'] for c in certificates]
        h6_ok = h3_ok and base_profile.vanishing_ratio and all(math.isfinite(x) for x in certified_tails)
        h6_detail = f"ω(r)/r^(γ/2) → 0: {base_profile.vanishing_ratio}; ω_Λ 尾积分界 = {certified_tails}"
    else:
        certified_tails = []
        h6_ok = h3_ok and _vanishing(tails, ns)
        h6_detail = f"∫₀^(T/n) ω_n/r^(1+γ/2) = {tails}"
    results['H6'] = HypothesisResult('H6', 'pass' if h6_ok else 'fail', h6_detail)

    report = HypothesisReport(
        results=results,
        sequences={'n': ns, 'd_gamma': d_gamma, 'd_one': d_one, 'products': products,
                   'tails': tails, 'certified_tails': certified_tails, 'dini': dinis, 'sup': sups},
        ordering_ok=ordering_ok,
    )
    failed = [k for k, r in results.items() if not r.passed]
    if failed:
        logger.warning(f"⚠️ 未通过的假设: {failed}")
    else:
        logger.info("✅ 所有可检查的假设均通过")
    return report


@dataclass
class EstimateReport:
    """估计检查报告：测得的经验常数或比值、是否通过、违例见证"""
    name: str
    passed: bool
    value: float
    detail: str = ''
    witness: Optional[Dict] = None
    extras: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        data = {'name': self.name, 'passed': self.passed, 'value': self.value, 'detail': self.detail}
        if self.witness is not None:
            data['witness'] = self.witness
        data.update(self.extras)
        return data
