#!/usr/bin/env python3
"""
测试 Hilbert 对与尺度范数
"""
import sys

import numpy as np

from hilbert import (build_space_pair, form_operator_norm, form_operator_norms, h_realization, operator_norm,
                     scale_factor, scale_factor_inv, scale_norm)


def test_identity_pair():
    """单位 Gram 矩阵：所有尺度范数都是欧氏范数"""
    sp = build_space_pair(np.eye(3), np.eye(3))
    u = np.array([1.0, -2.0, 2.0])
    for scale in (-1.0, -0.5, 0.0, 0.5, 1.0):
        assert abs(scale_norm(sp, u, scale) - 3.0) < 1e-12
    assert abs(sp.c_H - 1.0) < 1e-12
    print("✅ 单位 Gram 矩阵")


def test_diagonal_pair_scales():
    """对角 Gram 矩阵：V、H、V' 范数按 s^σ 加权"""
    sp = build_space_pair(np.diag([1.0, 2.0]), np.diag([4.0, 2.0]))
    e1 = np.array([1.0, 0.0])
    assert abs(scale_norm(sp, e1, 1.0) - 2.0) < 1e-12
    assert abs(scale_norm(sp, e1, 0.0) - 1.0) < 1e-12
    assert abs(scale_norm(sp, e1, -1.0) - 0.5) < 1e-12
    assert abs(sp.c_H - 1.0) < 1e-12
    print("✅ 对角 Gram 矩阵的尺度范数")


def test_scale_factor_inverse():
    """F_σ 与其逆互逆"""
    rng = np.random.default_rng(1)
    raw = rng.standard_normal((4, 4))
    gram_H = raw @ raw.T + 4 * np.eye(4)
    gram_V = gram_H + np.diag([1.0, 10.0, 100.0, 1000.0])
    sp = build_space_pair(gram_H, gram_V)
    for scale in (-1.0, -0.3, 0.0, 0.7, 1.0):
        product = scale_factor(sp, scale) @ scale_factor_inv(sp, scale)
        assert np.allclose(product, np.eye(4), atol=1e-9)
    print("✅ F_σ 与 F_σ⁻¹ 互逆")


def test_riesz_map_has_unit_norm():
    """G_V 作为 V → V' 的算子范数为 1"""
    sp = build_space_pair(np.diag([1.0, 3.0, 0.5]), np.diag([2.0, 30.0, 7.0]))
    assert abs(form_operator_norm(sp, sp.gram_V, -1.0) - 1.0) < 1e-10
    print("✅ Riesz 映射范数为 1")


def test_h_realization_spectrum():
    """B = G_H⁻¹ G_V 的特征值等于尺度算子的特征值"""
    sp = build_space_pair(np.diag([2.0, 1.0]), np.diag([6.0, 5.0]))
    eigs = np.sort(np.linalg.eigvals(h_realization(sp, sp.gram_V)).real)
    assert np.allclose(eigs, np.sort(sp.scale_eigs))
    print("✅ H 实现的谱")


def test_batched_norms_match_single():
    """批量范数与逐个计算一致"""
    rng = np.random.default_rng(2)
    sp = build_space_pair(np.eye(3), np.diag([1.0, 4.0, 9.0]))
    stack = rng.standard_normal((5, 3, 3)) + 1j * rng.standard_normal((5, 3, 3))
    batched = form_operator_norms(sp, stack, -0.5)
    single = [form_operator_norm(sp, m, -0.5) for m in stack]
    assert np.allclose(batched, single)
    op = stack[0]
    weighted = scale_factor(sp, 1.0) @ op @ scale_factor_inv(sp, -1.0)
    assert abs(operator_norm(sp, op, -1.0, 1.0) - np.linalg.svd(weighted, compute_uv=False)[0]) < 1e-12
    print("✅ 批量范数")


def general_pair():
    return build_space_pair(np.array([[2.0, 0.5], [0.5, 1.0]]), np.array([[5.0, 1.0], [1.0, 3.0]]))


def test_form_norm_matches_sphere_search():
    """形式范数与单位球上的穷举搜索相差不超过 2%"""
    sp = general_pair()
    form = np.array([[1.0, -2.0], [0.5, 3.0]])
    angles = np.linspace(0.0, np.pi, 721)
    circle = np.stack([np.cos(angles), np.sin(angles)])

    def sphere(scale):
        return circle / np.array([scale_norm(sp, x, scale) for x in circle.T])[None, :]

    us = sphere(1.0)
    for scale in (-1.0, -0.5, 0.0):
        vs = sphere(abs(scale))
        brute = float(np.max(np.abs(vs.T @ form @ us)))
        exact = form_operator_norm(sp, form, scale)
        assert abs(brute - exact) <= 0.02 * exact, (scale, brute, exact)
        assert brute <= exact * (1 + 1e-9)
    print("✅ 形式范数与穷举搜索一致")


def test_duality_pairing():
    """|(u, v)_H| ≤ ‖u‖_σ ‖v‖_{-σ}"""
    rng = np.random.default_rng(5)
    sp = general_pair()
    for _ in range(200):
        u, v = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        pairing = abs(np.vdot(v, sp.gram_H @ u))
        for scale in (-1.0, -0.4, 0.0, 0.6, 1.0):
            bound = scale_norm(sp, u, scale) * scale_norm(sp, v, -scale)
            assert pairing <= bound * (1 + 1e-12), (scale, pairing, bound)
    print("✅ 对偶不等式")


def test_interpolation_inequality():
    """‖u‖_θ ≤ ‖u‖_0^{1-θ}‖u‖_1^θ，‖u‖_{-γ} ≤ ‖u‖_{-1}^γ‖u‖_0^{1-γ}"""
    rng = np.random.default_rng(6)
    raw = rng.standard_normal((3, 3))
    gram_H = raw @ raw.T + 3 * np.eye(3)
    sp = build_space_pair(gram_H, gram_H + np.diag([1.0, 20.0, 400.0]))
    for _ in range(200):
        u = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        h, v, vp = scale_norm(sp, u, 0.0), scale_norm(sp, u, 1.0), scale_norm(sp, u, -1.0)
        for theta in (0.1, 0.25, 0.5, 0.9):
            assert scale_norm(sp, u, theta) <= h ** (1 - theta) * v ** theta * (1 + 1e-12)
            assert scale_norm(sp, u, -theta) <= vp ** theta * h ** (1 - theta) * (1 + 1e-12)
    print("✅ 插值不等式")


def test_rejects_bad_input():
    """非 Hermite Gram 矩阵与越界尺度被拒绝"""
    try:
        build_space_pair(np.array([[1.0, 1.0], [0.0, 1.0]]), np.eye(2))
        assert False, "应拒绝非 Hermite 矩阵"
    except ValueError:
        pass
    try:
        build_space_pair(np.eye(2), np.diag([1.0, -1.0]))
        assert False, "应拒绝非正定矩阵"
    except ValueError:
        pass
    sp = build_space_pair(np.eye(2), np.eye(2))
    try:
        scale_norm(sp, np.ones(2), 1.5)
        assert False, "应拒绝 |σ| > 1"
    except ValueError:
        pass
    try:
        form_operator_norm(sp, np.eye(2), 0.5)
        assert False, "形式范数的输出尺度必须在 [-1, 0] 内"
    except ValueError:
        pass
    print("✅ 非法输入被拒绝")


def main():
    print("🧪 Hilbert 对测试")
    print("=" * 50)
    tests = [test_identity_pair, test_diagonal_pair_scales, test_scale_factor_inverse,
             test_riesz_map_has_unit_norm, test_h_realization_spectrum, test_batched_norms_match_single,
             test_form_norm_matches_sphere_search, test_duality_pairing, test_interpolation_inequality,
             test_rejects_bad_input]
    failed = 0
    for test in tests:
        try:
            test()
        except Exception as e:
            failed += 1
            print(f"❌ {test.__name__}: {e}")
    print("=" * 50)
    print("✅ 所有测试通过" if not failed else f"❌ {failed} 个测试失败")
    return failed


if __name__ == '__main__':
    sys.exit(1 if main() else 0)
