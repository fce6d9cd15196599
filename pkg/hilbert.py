"""
Hilbert 对 V ↪ H 的坐标实现
用 Gram 矩阵表示 H、V 内积，谱方式实现插值尺度 V_σ 与对偶尺度
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from config import HERMITIAN_TOL

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpacePair:
    """Hilbert 对数据类（构造后不可变）"""
    dim: int
    gram_H: np.ndarray
    gram_V: np.ndarray
    scale_eigs: np.ndarray    # 尺度算子 S 的特征值 s_j
    scale_basis: np.ndarray   # H-正交特征向量（按列）
    c_H: float

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        """u 在 scale_basis 下的系数 û = W* G_H u"""
        return self.scale_basis.conj().T @ (self.gram_H @ u)


def _check_hermitian_pd(name: str, gram: np.ndarray) -> np.ndarray:
    gram = np.asarray(gram, dtype=complex)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ValueError(f"{name} 必须是方阵, 实际形状 {gram.shape}")
    scale = max(np.linalg.norm(gram), np.finfo(float).tiny)
    defect = np.linalg.norm(gram - gram.conj().T) / scale
    if defect > HERMITIAN_TOL:
        raise ValueError(f"{name} 不是 Hermite 矩阵 (相对对称误差 {defect:.3e})")
    gram = 0.5 * (gram + gram.conj().T)
    smallest = np.linalg.eigvalsh(gram)[0]
    if smallest <= 0:
        raise ValueError(f"{name} 不是正定矩阵 (最小特征值 {smallest:.3e})")
    return gram


def build_space_pair(gram_H, gram_V) -> SpacePair:
    """
    由 Gram 矩阵构造 Hilbert 对
    Args:
        gram_H: H 内积的 Gram 矩阵
        gram_V: V 内积的 Gram 矩阵
    Returns:
        SpacePair，其中 c_H² = max_j 1/s_j
    """
    gram_H = _check_hermitian_pd('gram_H', gram_H)
    gram_V = _check_hermitian_pd('gram_V', gram_V)
    if gram_H.shape != gram_V.shape:
        raise ValueError(f"Gram 矩阵维数不一致: {gram_H.shape} vs {gram_V.shape}")

    # 广义特征问题 G_V w = s G_H w，eigh 内部对 G_H 做 Cholesky 约化
    eigs, basis = scipy.linalg.eigh(gram_V, gram_H)
    if np.any(eigs <= 0):
        raise ValueError(f"尺度算子出现非正特征值: {eigs.min():.3e}")

    c_H = float(np.sqrt(np.max(1.0 / eigs)))
    logger.debug(f"构造 Hilbert 对: N={gram_H.shape[0]}, s∈[{eigs.min():.4g}, {eigs.max():.4g}], c_H={c_H:.4g}")
    return SpacePair(
        dim=gram_H.shape[0],
        gram_H=gram_H,
        gram_V=gram_V,
        scale_eigs=eigs,
        scale_basis=basis,
        c_H=c_H,
    )


def _check_scale(scale: float):
    if abs(scale) > 1 + 1e-15:
        raise ValueError(f"尺度指标必须在 [-1, 1] 内, 实际 {scale}")


def scale_factor(sp: SpacePair, scale: float) -> np.ndarray:
    """权矩阵 F_σ = diag(s^{σ/2}) W* G_H，使 ‖u‖_σ = ‖F_σ u‖₂"""
    _check_scale(scale)
    return (sp.scale_eigs ** (scale / 2))[:, None] * (sp.scale_basis.conj().T @ sp.gram_H)


def scale_factor_inv(sp: SpacePair, scale: float) -> np.ndarray:
    """F_σ 的逆 W diag(s^{-σ/2})"""
    _check_scale(scale)
    return sp.scale_basis * (sp.scale_eigs ** (-scale / 2))[None, :]


def scale_norm(sp: SpacePair, u, scale: float) -> float:
    """
    插值尺度范数
    Args:
        u: 坐标向量
        scale: σ ∈ [-1, 1]，σ = -γ 表示 V'_γ 范数
    Returns:
        (Σ_j s_j^σ |û_j|²)^{1/2}
    """
    _check_scale(scale)
    u = np.asarray(u, dtype=complex)
    if u.shape != (sp.dim,):
        raise ValueError(f"向量长度应为 {sp.dim}, 实际 {u.shape}")
    coeffs = sp.coefficients(u)
    return float(np.sqrt(np.sum(sp.scale_eigs ** scale * np.abs(coeffs) ** 2)))


def h_realization(sp: SpacePair, form_matrix: np.ndarray) -> np.ndarray:
    """形式矩阵 𝔸 在 H 中的实现 B = G_H⁻¹ 𝔸"""
    return scipy.linalg.solve(sp.gram_H, form_matrix, assume_a='pos')


def operator_norm(sp: SpacePair, op: np.ndarray, in_scale: float, out_scale: float) -> float:
    """坐标算子 V_in → V_out 的算子范数 ‖F_out op F_in⁻¹‖₂"""
    weighted = scale_factor(sp, out_scale) @ op @ scale_factor_inv(sp, in_scale)
    return float(np.linalg.norm(weighted, 2))


def _form_weights(sp: SpacePair, out_scale: float):
    if not -1 - 1e-15 <= out_scale <= 1e-15:
        raise ValueError(f"形式范数的输出尺度必须在 [-1, 0] 内, 实际 {out_scale}")
    left = (sp.scale_eigs ** (out_scale / 2))[:, None] * sp.scale_basis.conj().T
    right = sp.scale_basis * (sp.scale_eigs ** -0.5)[None, :]
    return left, right


def form_weighted(sp: SpacePair, form_matrix: np.ndarray, out_scale: float) -> np.ndarray:
    """diag(s^{σ/2}) W* 𝔸 W diag(s^{-1/2})，其最大奇异值即 V → V_σ 的形式范数"""
    left, right = _form_weights(sp, out_scale)
    return left @ np.asarray(form_matrix) @ right


def form_operator_norm(sp: SpacePair, form_matrix, out_scale: float) -> float:
    """
    形式的加权算子范数 sup |v*𝔸u| / (‖u‖_V ‖v‖_{V_|σ|})
    Args:
        form_matrix: 形式 a(u,v) = v*𝔸u 的矩阵
        out_scale: σ ∈ [-1, 0]；σ=-1 为 L(V,V')，σ=-γ 为 L(V,V'_γ)
    """
    form_matrix = np.asarray(form_matrix, dtype=complex)
    if form_matrix.shape != (sp.dim, sp.dim):
        raise ValueError(f"形式矩阵维数应为 {(sp.dim, sp.dim)}, 实际 {form_matrix.shape}")
    return float(np.linalg.norm(form_weighted(sp, form_matrix, out_scale), 2))


def form_operator_norms(sp: SpacePair, stack: np.ndarray, out_scale: float) -> np.ndarray:
    """form_operator_norm 的批量版本，stack 形状 (..., N, N)"""
    left, right = _form_weights(sp, out_scale)
    return np.linalg.norm(left @ np.asarray(stack) @ right, 2, axis=(-2, -1))


def operator_norms(sp: SpacePair, stack: np.ndarray, in_scale: float, out_scale: float) -> np.ndarray:
    """operator_norm 的批量版本，stack 形状 (..., N, N)"""
    weighted = scale_factor(sp, out_scale) @ np.asarray(stack) @ scale_factor_inv(sp, in_scale)
    return np.linalg.norm(weighted, 2, axis=(-2, -1))
