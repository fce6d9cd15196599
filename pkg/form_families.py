"""
内置形式族与 Gram 生成器
配置文件中按名称引用: scalar-poly, scalar-power, spectral-heat-1d, rotating-mix, table
"""
import logging
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
import scipy.linalg
from scipy.interpolate import interp1d

from forms import FormPath
from hilbert import SpacePair, build_space_pair

logger = logging.getLogger(__name__)


class FormFamily(Enum):
    """内置形式族枚举"""
    SCALAR_POLY = "scalar-poly"
    SCALAR_POWER = "scalar-power"
    SPECTRAL_HEAT_1D = "spectral-heat-1d"
    ROTATING_MIX = "rotating-mix"
    TABLE = "table"


class GramKind(Enum):
    """Gram 生成器枚举"""
    IDENTITY = "identity"
    DIAG = "diag"
    SPECTRAL_LAPLACIAN_1D = "spectral-laplacian-1d"
    EXPLICIT = "explicit"


def laplacian_eigs(dim: int) -> np.ndarray:
    """正弦基下 -∂² 的特征值 (kπ)², k = 1…dim"""
    return (np.arange(1, dim + 1) * np.pi) ** 2


def position_matrix(dim: int) -> np.ndarray:
    """乘以 x 的算子在正交正弦基 √2 sin(kπx) 下的矩阵"""
    k = np.arange(1, dim + 1)
    diff = k[:, None] - k[None, :]
    total = k[:, None] + k[None, :]
    with np.errstate(divide='ignore', invalid='ignore'):
        first = np.where(diff != 0, ((-1.0) ** diff - 1) / (diff * np.pi) ** 2, 0.0)
    second = ((-1.0) ** total - 1) / (total * np.pi) ** 2
    mat = first - second
    np.fill_diagonal(mat, 0.5)
    return mat


def build_gram(kind: str, dim: int, h_diag: Optional[List[float]] = None,
               v_diag: Optional[List[float]] = None, gram_H=None, gram_V=None) -> SpacePair:
    """
    按生成器名称构造 Hilbert 对
    Args:
        kind: identity | diag | spectral-laplacian-1d | explicit
        dim: 维数 N
    Returns:
        SpacePair
    """
    kind = GramKind(kind)
    if kind == GramKind.IDENTITY:
        return build_space_pair(np.eye(dim), np.eye(dim))
    if kind == GramKind.DIAG:
        if h_diag is None or v_diag is None or len(h_diag) != dim or len(v_diag) != dim:
            raise ValueError(f"diag 生成器需要长度为 {dim} 的 h_diag 与 v_diag")
        return build_space_pair(np.diag(h_diag), np.diag(v_diag))
    if kind == GramKind.SPECTRAL_LAPLACIAN_1D:
        return build_space_pair(np.eye(dim), np.diag(1.0 + laplacian_eigs(dim)))
    if gram_H is None or gram_V is None:
        raise ValueError("explicit 生成器需要 gram_H 与 gram_V")
    sp = build_space_pair(np.asarray(gram_H, dtype=float), np.asarray(gram_V, dtype=float))
    if sp.dim != dim:
        raise ValueError(f"显式 Gram 矩阵维数 {sp.dim} 与 dim={dim} 不一致")
    return sp


def _scalar_path(space: SpacePair, horizon: float, coeff, descriptor: Dict) -> FormPath:
    gram_V = space.gram_V
    return FormPath(space=space, horizon=horizon,
                    evaluator=lambda t: coeff(t) * gram_V, descriptor=descriptor)


def scalar_poly(space: SpacePair, horizon: float, coeffs: List[float]) -> FormPath:
    """𝔸(t) = c(t)·G_V，c(t) = Σ a_k t^k"""
    if not coeffs:
        raise ValueError("scalar-poly 至少需要一个系数")
    poly = np.polynomial.Polynomial(coeffs)
    autonomous = all(c == 0 for c in coeffs[1:])
    descriptor = {'family': FormFamily.SCALAR_POLY.value, 'coeffs': list(coeffs), 'autonomous': autonomous}
    return _scalar_path(space, horizon, lambda t: complex(poly(t)), descriptor)


def scalar_power(space: SpacePair, horizon: float, a: float = 1.0, b: float = 1.0,
                 eta: float = 1.0) -> FormPath:
    """𝔸(t) = (a + b·t^η)·G_V"""
    if eta < 0:
        raise ValueError(f"η 必须非负, 实际 {eta}")
    autonomous = b == 0 or eta == 0
    descriptor = {'family': FormFamily.SCALAR_POWER.value, 'a': a, 'b': b, 'eta': eta, 'autonomous': autonomous}
    return _scalar_path(space, horizon, lambda t: complex(a + b * t ** eta), descriptor)


def spectral_heat_1d(space: SpacePair, horizon: float, b: float = 1.0, eta: float = 0.75,
                     nu: float = 0.0) -> FormPath:
    """
    一维热方程的 Galerkin 形式
    𝔸(t) = κ(t)·diag((kπ)²) + ν·M_x，κ(t) = 1 + b·t^η，M_x 为乘 x 的算子
    Args:
        space: 必须由 spectral-laplacian-1d 生成器构造
    """
    dim = space.dim
    expected = np.diag(1.0 + laplacian_eigs(dim))
    if not np.allclose(space.gram_V, expected) or not np.allclose(space.gram_H, np.eye(dim)):
        raise ValueError("spectral-heat-1d 需要 spectral-laplacian-1d 的 Hilbert 对")
    stiffness = np.diag(laplacian_eigs(dim)).astype(complex)
    potential = nu * position_matrix(dim)
    descriptor = {'family': FormFamily.SPECTRAL_HEAT_1D.value, 'b': b, 'eta': eta, 'nu': nu,
                  'autonomous': b == 0 or eta == 0}
    return FormPath(space=space, horizon=horizon,
                    evaluator=lambda t: (1 + b * t ** eta) * stiffness + potential,
                    descriptor=descriptor)


def rotating_mix(space: SpacePair, horizon: float, eigs: List[float], rate: float = 1.0) -> FormPath:
    """
    酉共轭对角路径 𝔸(t) = L U(t) diag(d) U(t)* L*，G_V = L L*，U(t) = exp(rate·t·K)
    K 为相邻坐标间的实反对称耦合
    """
    dim = space.dim
    if len(eigs) != dim or min(eigs) <= 0:
        raise ValueError(f"rotating-mix 需要 {dim} 个正的对角元")
    chol = scipy.linalg.cholesky(space.gram_V, lower=True)
    skew = np.diag(np.ones(dim - 1), 1) - np.diag(np.ones(dim - 1), -1)
    diag = np.diag(np.asarray(eigs, dtype=float))
    descriptor = {'family': FormFamily.ROTATING_MIX.value, 'eigs': list(eigs), 'rate': rate,
                  'autonomous': rate == 0 or dim == 1 or len(set(eigs)) == 1}

    def evaluate(t):
        rot = scipy.linalg.expm(rate * t * skew)
        return chol @ rot @ diag @ rot.T @ chol.conj().T

    return FormPath(space=space, horizon=horizon, evaluator=evaluate, descriptor=descriptor)


def table_path(space: SpacePair, horizon: float, times, matrices, interpolation: str = 'linear') -> FormPath:
    """
    采样表形式路径
    Args:
        times: 升序采样时刻，覆盖 [0, T]
        matrices: 形状 (len(times), N, N) 的复矩阵
        interpolation: linear | previous
    """
    times = np.asarray(times, dtype=float)
    matrices = np.asarray(matrices, dtype=complex)
    if matrices.shape != (len(times), space.dim, space.dim):
        raise ValueError(f"采样表形状应为 {(len(times), space.dim, space.dim)}, 实际 {matrices.shape}")
    if np.any(np.diff(times) <= 0) or times[0] > 0 or times[-1] < horizon:
        raise ValueError("采样时刻必须严格升序并覆盖 [0, T]")
    if interpolation not in ('linear', 'previous'):
        raise ValueError(f"不支持的插值方式: {interpolation}")

    autonomous = len(times) == 1 or bool(np.all(matrices == matrices[0]))
    descriptor = {'family': FormFamily.TABLE.value, 'interpolation': interpolation,
                  'samples': len(times), 'autonomous': autonomous}
    if len(times) == 1:
        only = matrices[0]
        return FormPath(space=space, horizon=horizon, evaluator=lambda t: only, descriptor=descriptor)

    # interp1d 只处理实数，实部虚部分别插值
    real = interp1d(times, matrices.real, axis=0, kind=interpolation, assume_sorted=True)
    imag = interp1d(times, matrices.imag, axis=0, kind=interpolation, assume_sorted=True)
    return FormPath(space=space, horizon=horizon,
                    evaluator=lambda t: real(t) + 1j * imag(t), descriptor=descriptor)


def load_table(path: str) -> Dict[str, np.ndarray]:
    """读取 .npz 采样表（键 times、matrices）"""
    with np.load(path) as data:
        if 'times' not in data or 'matrices' not in data:
            raise ValueError(f"采样表 {path} 必须包含 times 与 matrices")
        return {'times': data['times'], 'matrices': data['matrices']}


def build_family(space: SpacePair, horizon: float, family: str, params: Optional[Dict] = None,
                 path: Optional[str] = None, interpolation: str = 'linear') -> FormPath:
    """
    按名称构造内置形式族
    Args:
        space: Hilbert 对
        horizon: 时间区间长度 T
        family: 形式族名称
        params: 形式族参数
        path: table 族的采样表文件
    Returns:
        FormPath
    """
    params = dict(params or {})
    family = FormFamily(family)
    logger.debug(f"构造形式族 {family.value}: {params}")
    if family == FormFamily.SCALAR_POLY:
        return scalar_poly(space, horizon, params.get('coeffs', [1.0]))
    if family == FormFamily.SCALAR_POWER:
        return scalar_power(space, horizon, **params)
    if family == FormFamily.SPECTRAL_HEAT_1D:
        return spectral_heat_1d(space, horizon, **params)
    if family == FormFamily.ROTATING_MIX:
        return rotating_mix(space, horizon, **params)
    if path is not None:
        table = load_table(path)
    else:
        table = {'times': params.get('times'), 'matrices': params.get('matrices')}
        if table['times'] is None or table['matrices'] is None:
            raise ValueError("table 族需要 path 或 params.times/params.matrices")
    return table_path(space, horizon, table['times'], table['matrices'], interpolation)
