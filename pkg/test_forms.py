#!/usr/bin/env python3
"""
测试形式路径、结构常数、连续模与假设检查
"""
import math
import sys

import numpy as np

from affine import build_affine
from form_families import build_family, build_gram, position_matrix, scalar_poly, scalar_power, table_path
from forms import (CoercivityError, FormPath, HypothesisError, ModulusProfile, PowerModel, check_form_bounds,
                   check_hypotheses, dini_quantities, estimate_constants, measure_modulus)
from hilbert import build_space_pair

LADDER = [4, 8, 16, 32, 64]


def scalar_space():
    return build_gram('identity', 1)


def test_constants_scalar():
    """c ≡ 1：M = 1，α = 1，β = 0"""
    fp = scalar_poly(scalar_space(), 1.0, [1.0])
    constants = estimate_constants(fp)
    assert abs(constants.M - 1.0) < 1e-12
    assert abs(constants.alpha - 1.0) < 1e-5
    assert constants.beta == 0.0
    assert 0 < constants.theta < math.pi / 2
    print(f"✅ 标量常数: θ={constants.theta:.6f}")


def test_constants_recheck():
    """随机 (t, u, v) 上复核常数"""
    fp = scalar_poly(scalar_space(), 1.0, [1.0, 1.0])
    constants = estimate_constants(fp)
    bounds = check_form_bounds(fp, constants)
    assert bounds['bound_ratio'] <= 1 + 1e-9
    assert bounds['coercivity_margin'] >= 1 - 1e-9
    print(f"✅ 常数复核: {bounds}")


def test_coercivity_failure():
    """β 阶梯上都不满足拟强制性时报错"""
    sp = build_space_pair(np.eye(1), np.array([[1e6]]))
    fp = scalar_poly(sp, 1.0, [-1.0])
    try:
        estimate_constants(fp)
        assert False, "应抛出 CoercivityError"
    except CoercivityError as e:
        assert 'quasi-coercive' in str(e)
    print("✅ 非拟强制形式被拒绝")


def test_eval_outside_horizon():
    """t < 0 被拒绝，t > T 常数延拓"""
    fp = scalar_poly(scalar_space(), 1.0, [1.0, 1.0])
    assert abs(fp.eval(5.0)[0, 0] - 2.0) < 1e-12
    try:
        fp.eval(-0.1)
        assert False, "应拒绝 t < 0"
    except ValueError:
        pass
    print("✅ 时间范围检查")


def test_power_modulus_measured():
    """c(t) = 1 + t^0.75：测得的连续模拟合 η = 0.75"""
    fp = scalar_power(scalar_space(), 1.0, a=1.0, b=1.0, eta=0.75)
    profile = measure_modulus(fp, 0.5)
    assert abs(profile.fit.eta - 0.75) < 1e-6
    assert abs(profile.fit.C - 1.0) < 1e-6
    assert profile.dini_finite
    assert profile.vanishing_ratio
    assert abs(profile.omega(1.0) - 1.0) < 1e-9
    print(f"✅ 幂律连续模: {profile.fit}")


def test_autonomous_modulus_is_zero():
    """自治路径：ω ≡ 0，Dini 积分为 0"""
    fp = scalar_poly(scalar_space(), 1.0, [2.0])
    profile = measure_modulus(fp, 0.5)
    assert profile.omega(0.3) == 0.0
    assert profile.dini_integral == 0.0
    assert fp.is_autonomous
    print("✅ 自治路径的连续模")


def test_dini_closed_form():
    """幂律 Dini 积分与上确界比的闭式"""
    dini, sup = dini_quantities(PowerModel(1.0, 0.75), 0.5, 1.0)
    assert abs(dini - 2.0) < 1e-12 and abs(sup - 1.0) < 1e-12
    dini, sup = dini_quantities(PowerModel(1.0, 0.2), 0.5, 1.0)
    assert math.isinf(dini) and math.isinf(sup)
    profile = ModulusProfile.power(2.0, 1.0, 0.0, 1.0)
    assert abs(profile.omega(0.25) - 0.5) < 1e-12
    assert abs(profile.dini_tail(0.5) - 1.0) < 1e-12
    print("✅ Dini 闭式")


def test_hypotheses_pass_when_eta_large():
    """η > γ/2：(H0)-(H6) 通过"""
    fp = scalar_power(scalar_space(), 1.0, eta=0.75)
    seq = [build_affine(fp, m) for m in LADDER]
    report = check_hypotheses(fp, seq, 0.5)
    failed = [k for k, r in report.results.items() if not r.passed]
    assert report.all_passed, f"未通过: {failed}"
    assert report.results['H4'].status == 'assumed'
    assert report.sequences['n'] == LADDER
    print("✅ η > γ/2 时假设通过")


def test_hypotheses_fail_when_eta_small():
    """η ≤ γ/2：(H3) 失败"""
    fp = scalar_power(scalar_space(), 1.0, eta=0.2)
    seq = [build_affine(fp, m) for m in LADDER]
    report = check_hypotheses(fp, seq, 0.5)
    assert report.results['H3'].status == 'fail'
    assert not report.all_passed
    print("✅ η ≤ γ/2 时 (H3) 失败")


def test_hypotheses_pass_just_above_threshold():
    """η 略大于 γ/2：d_n·n^(γ/2) 缓慢衰减，(H0)-(H6) 仍通过"""
    for eta, gamma in ((0.3, 0.5), (0.4, 0.5), (0.5, 0.9)):
        fp = scalar_power(scalar_space(), 1.0, eta=eta)
        seq = [build_affine(fp, m) for m in LADDER]
        report = check_hypotheses(fp, seq, gamma)
        failed = [k for k, r in report.results.items() if not r.passed]
        assert report.all_passed, f"η={eta}, γ={gamma} 未通过: {failed}"
        products = report.sequences['products']
        assert products[-1] < products[0]
        assert all(math.isfinite(x) for x in report.sequences['certified_tails'])
    print("✅ η 略大于 γ/2 时假设通过")


def test_small_eta_still_converges():
    """η = 0.2 ≤ γ/2：d_n → 0，(H0)(H1) 通过，(H3)(H6) 失败"""
    fp = scalar_power(scalar_space(), 1.0, eta=0.2)
    report = check_hypotheses(fp, [build_affine(fp, m) for m in LADDER], 0.5)
    assert report.results['H0'].passed and report.results['H1'].passed
    assert report.results['H3'].status == 'fail'
    assert report.results['H6'].status == 'fail'
    print("✅ η = 0.2: d_n → 0 但 Dini 条件失败")


def test_identical_copies_pass():
    """a_n = a：d_n ≡ 0，所有假设通过"""
    fp = scalar_power(scalar_space(), 1.0, eta=0.75)
    report = check_hypotheses(fp, [fp] * 4, 0.5)
    failed = [k for k, r in report.results.items() if not r.passed]
    assert report.all_passed, f"未通过: {failed}"
    assert report.sequences['d_gamma'] == [0.0] * 4
    assert report.sequences['n'] == [1, 2, 3, 4]
    print("✅ 相同副本通过所有假设")


def test_constant_offset_fails():
    """a_n = a + 常数：d_n 不趋于零，(H1)(H5) 失败"""
    fp = scalar_power(scalar_space(), 1.0, eta=0.75)
    sp = fp.space
    shifted = FormPath(space=sp, horizon=1.0, evaluator=lambda t: fp.eval(t) + sp.gram_V)
    report = check_hypotheses(fp, [shifted] * 4, 0.5)
    assert report.results['H1'].status == 'fail'
    assert report.results['H5'].status == 'fail'
    assert not report.all_passed
    print("✅ 常数偏移使 (H5) 失败")


def test_modulus_subadditive():
    """测得的连续模次可加：ω̂(δ₁+δ₂) ≤ ω̂(δ₁) + ω̂(δ₂)"""
    heat_space = build_gram('spectral-laplacian-1d', 4)
    paths = [scalar_power(scalar_space(), 1.0, eta=0.75),
             scalar_poly(scalar_space(), 1.0, [1.0, -2.0, 3.0]),
             build_family(heat_space, 1.0, 'spectral-heat-1d', {'b': 1.0, 'eta': 0.5})]
    steps = 64
    grid = np.arange(1, steps + 1) / steps
    for fp in paths:
        profile = measure_modulus(fp, 0.5, delta_grid=grid)
        for i in range(1, steps):
            for j in range(1, steps - i + 1):
                total = profile.omega((i + j) / steps)
                assert total <= profile.omega(i / steps) + profile.omega(j / steps) + 1e-9, (i, j)
    print("✅ 连续模次可加")


def test_hypotheses_reject_mismatch():
    """空序列或时间区间不一致时报错"""
    fp = scalar_power(scalar_space(), 1.0)
    other = scalar_power(scalar_space(), 2.0)
    for seq in ([], [other]):
        try:
            check_hypotheses(fp, seq, 0.5)
            assert False, "应抛出 HypothesisError"
        except HypothesisError:
            pass
    print("✅ 不一致的序列被拒绝")


def test_families():
    """内置形式族的基本性质"""
    heat_space = build_gram('spectral-laplacian-1d', 4)
    heat = build_family(heat_space, 1.0, 'spectral-heat-1d', {'b': 1.0, 'eta': 0.75, 'nu': 0.5})
    at_zero = heat.eval(0.0)
    assert np.allclose(at_zero, at_zero.conj().T)
    assert np.allclose(position_matrix(4), position_matrix(4).T)

    rot_space = build_gram('diag', 3, h_diag=[1, 1, 1], v_diag=[1, 2, 3])
    rot = build_family(rot_space, 1.0, 'rotating-mix', {'eigs': [1.0, 2.0, 3.0], 'rate': 1.0})
    eigs = np.sort(np.linalg.eigvals(np.linalg.solve(rot_space.gram_V, rot.eval(0.7))).real)
    assert np.allclose(eigs, [1.0, 2.0, 3.0])

    table = table_path(scalar_space(), 1.0, [0.0, 1.0], [[[1.0]], [[3.0]]])
    assert abs(table.eval(0.5)[0, 0] - 2.0) < 1e-12
    step = table_path(scalar_space(), 1.0, [0.0, 0.5, 1.0], [[[1.0]], [[2.0]], [[3.0]]], 'previous')
    assert abs(step.eval(0.7)[0, 0] - 2.0) < 1e-12
    try:
        build_family(heat_space, 1.0, 'spectral-heat-1d', {'unknown': 1})
        assert False, "应拒绝未知参数"
    except TypeError:
        pass
    print("✅ 内置形式族")


def test_custom_path():
    """直接用求值函数构造的路径"""
    sp = scalar_space()
    fp = FormPath(space=sp, horizon=2.0, evaluator=lambda t: np.array([[1 + t]]))
    stack = fp.eval_many([0.0, 1.0, 2.0])
    assert stack.shape == (3, 1, 1)
    assert not fp.is_autonomous
    print("✅ 自定义路径")


def main():
    print("🧪 形式路径测试")
    print("=" * 50)
    tests = [test_constants_scalar, test_constants_recheck, test_coercivity_failure, test_eval_outside_horizon,
             test_power_modulus_measured, test_autonomous_modulus_is_zero, test_dini_closed_form,
             test_hypotheses_pass_when_eta_large, test_hypotheses_fail_when_eta_small,
             test_hypotheses_pass_just_above_threshold, test_small_eta_still_converges, test_identical_copies_pass,
             test_constant_offset_fails, test_modulus_subadditive,
             test_hypotheses_reject_mismatch, test_families, test_custom_path]
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
