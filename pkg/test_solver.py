#!/usr/bin/env python3
"""
测试 Crank-Nicolson 参照解、冻结系数表示求解器与解空间范数
"""
import math
import os
import sys
import tempfile

import numpy as np
import pandas as pd

from form_families import build_family, build_gram, scalar_poly
from forms import FormPath
from hilbert import scale_factor
from solver import (ATSolver, ContractionError, ConvergenceError, TimeGrid, apply_P, apply_Q, at_solve, at_u1,
                    at_u2, oracle_solve, p_norm_estimate, q_identity_residual, q_norm_estimate, solution_norms,
                    write_trajectory_csv)


def scalar_space():
    return build_gram('identity', 1)


def one(t):
    return np.ones(1)


def test_time_grid():
    """均匀网格与非法网格"""
    grid = TimeGrid.uniform(2.0, 8)
    assert grid.cells == 8 and grid.nodes[-1] == 2.0
    assert abs(grid.trapezoid_weights().sum() - 2.0) < 1e-12
    for nodes in ([0.0], [0.0, 0.5, 0.4, 1.0], [0.1, 1.0]):
        try:
            TimeGrid(horizon=1.0, nodes=np.array(nodes))
            assert False, f"应拒绝网格 {nodes}"
        except ValueError:
            pass
    print("✅ 时间网格")


def test_oracle_decay():
    """u̇ + u = 0, u(0) = 1：u(1) = e^{-1}"""
    fp = scalar_poly(scalar_space(), 1.0, [1.0])
    traj = oracle_solve(fp, None, [1.0], TimeGrid.uniform(1.0, 16))
    assert abs(traj.values[-1, 0] - math.exp(-1)) < 1e-8
    assert np.allclose(traj.derivatives, -traj.values)
    print("✅ 参照解: 指数衰减")


def test_oracle_time_dependent():
    """c(t) = 1 + t：u(t) = exp(-(t + t²/2))"""
    fp = scalar_poly(scalar_space(), 1.0, [1.0, 1.0])
    grid = TimeGrid.uniform(1.0, 16)
    traj = oracle_solve(fp, None, [1.0], grid)
    exact = np.exp(-(grid.nodes + grid.nodes ** 2 / 2))
    assert np.max(np.abs(traj.values[:, 0] - exact)) < 1e-7
    print("✅ 参照解: 时间相关系数")


def test_frozen_parts():
    """u1 = e^{-tB(t)}u0，u2 = ∫₀ᵗ e^{-(t-s)B(t)}f(s)ds"""
    grid = TimeGrid.uniform(1.0, 16)
    first = at_u1(scalar_poly(scalar_space(), 1.0, [2.0]), grid, [1.0])
    assert abs(first.values[-1, 0] - math.exp(-2)) < 1e-12
    assert first.provenance == 'at-u1'
    second = at_u2(scalar_poly(scalar_space(), 1.0, [1.0]), grid, one)
    assert np.max(np.abs(second.values[:, 0] - (1 - np.exp(-grid.nodes)))) < 1e-10
    print("✅ 冻结系数的 u1 与 u2")


def test_autonomous_operators_vanish():
    """自治路径：P = 0，Q^μ = 0，一次迭代即收敛"""
    fp = scalar_poly(scalar_space(), 1.0, [2.0])
    grid = TimeGrid.uniform(1.0, 8)
    solver = ATSolver(fp, grid)
    h = oracle_solve(fp, None, [1.0], grid)
    assert np.allclose(apply_P(fp, grid, h, solver).values, 0.0)
    assert np.allclose(apply_Q(fp, 10.0, grid, h, solver).values, 0.0)
    assert p_norm_estimate(fp, grid, solver) == 0.0
    traj = at_solve(fp, None, [1.0], grid)
    assert traj.extras['iterations'] == 1
    assert np.max(np.abs(traj.values[:, 0] - np.exp(-2 * grid.nodes))) < 1e-12
    print("✅ 自治路径的 P、Q 为零")


def test_at_solver_matches_exact():
    """c(t) = 1 + t：u(1) = e^{-1.5}"""
    fp = scalar_poly(scalar_space(), 1.0, [1.0, 1.0])
    traj = at_solve(fp, None, [1.0], TimeGrid.uniform(1.0, 32))
    assert abs(traj.values[-1, 0] - math.exp(-1.5)) < 1e-6
    assert traj.provenance == 'at-solver'
    assert traj.extras['q'] < 0.5
    assert traj.extras['increments'][-1] <= 1e-12
    print(f"✅ 表示求解器: {traj.extras['iterations']} 次迭代, μ={traj.extras['mu']}")


def test_q_ladder_monotone():
    """q(μ) 随 μ 不增"""
    fp = scalar_poly(scalar_space(), 1.0, [1.0, 1.0])
    grid = TimeGrid.uniform(1.0, 16)
    solver = ATSolver(fp, grid)
    values = [q_norm_estimate(fp, mu, grid, solver)['q'] for mu in (0.0, 10.0, 100.0, 1000.0)]
    assert all(b <= a * (1 + 1e-6) for a, b in zip(values, values[1:])), values
    assert values[0] > 0
    print(f"✅ q 阶梯: {[f'{v:.3g}' for v in values]}")


def test_heat_agrees_with_oracle():
    """一维热方程 N = 16，κ = 1 + t^0.75，64 个单元：表示求解器与参照解在 C([0,T];H) 中相对误差 ≤ 1e-5"""
    sp = build_gram('spectral-laplacian-1d', 16)
    fp = build_family(sp, 1.0, 'spectral-heat-1d', {'b': 1.0, 'eta': 0.75})
    grid = TimeGrid.uniform(1.0, 64)
    u0 = np.zeros(16)
    u0[0], u0[3] = 1.0, 0.5

    def ones(t):
        return np.ones(16)

    h_weight = scale_factor(sp, 0.0)
    for f, start in ((None, u0), (ones, u0), (ones, np.zeros(16))):
        at = at_solve(fp, f, start, grid)
        ref = oracle_solve(fp, f, start, grid)
        gap = float(np.max(np.linalg.norm((at.values - ref.values) @ h_weight.T, axis=1)))
        scale = float(np.max(np.linalg.norm(ref.values @ h_weight.T, axis=1)))
        assert gap <= 1e-5 * scale, f"相对误差 {gap / scale:.3e}"
    print("✅ 热方程: 两种求解器一致（η = 0.75, 64 个单元）")


def test_solution_norms():
    """u = e^{-t}：‖u‖²_{L²H} = (1 - e^{-2})/2"""
    fp = scalar_poly(scalar_space(), 1.0, [1.0])
    traj = oracle_solve(fp, None, [1.0], TimeGrid.uniform(1.0, 16))
    norms = solution_norms(fp.space, traj)
    expected = math.sqrt((1 - math.exp(-2)) / 2)
    assert abs(norms['l2_H'] - expected) < 1e-7
    assert abs(norms['l2_dot_H'] - expected) < 1e-7
    assert abs(norms['h1_H'] - math.sqrt(2) * expected) < 1e-7
    assert abs(norms['sup_H'] - 1.0) < 1e-12
    assert abs(norms['mr2_VH'] - 2 * expected) < 1e-7
    print("✅ 解空间范数")


def test_rough_path_without_shift():
    """快速振荡系数且 μ 上限为 0：没有收缩"""
    sp = scalar_space()
    fp = FormPath(space=sp, horizon=1.0, evaluator=lambda t: (1 + 0.9 * math.sin(40 * t)) * sp.gram_V)
    try:
        at_solve(fp, None, [1.0], TimeGrid.uniform(1.0, 64), mu_cap=0.0)
        assert False, "应抛出 ContractionError"
    except ContractionError as e:
        assert 'no contraction' in str(e)
        assert len(e.ladder) == 1 and e.ladder[0]['q'] >= 0.95
    print("✅ 无收缩时报错")


def test_iteration_limit():
    """max_iter = 1 时非自治问题无法收敛"""
    fp = scalar_poly(scalar_space(), 1.0, [1.0, 1.0])
    try:
        at_solve(fp, None, [1.0], TimeGrid.uniform(1.0, 16), max_iter=1)
        assert False, "应抛出 ConvergenceError"
    except ConvergenceError as e:
        assert e.last_increment > 0
    print("✅ 迭代次数上限")


def test_q_identity_residual():
    """w = B u 满足 w - Q w = B(u1 + u2)（离散残差小）"""
    fp = scalar_poly(scalar_space(), 1.0, [1.0, 1.0])
    grid = TimeGrid.uniform(1.0, 32)
    traj = at_solve(fp, None, [1.0], grid)
    residual = q_identity_residual(fp, traj)
    assert residual < 1e-2
    print(f"✅ Q 恒等式残差 {residual:.2e}")


def test_trajectory_csv():
    """轨迹 CSV 的列"""
    sp = build_gram('identity', 2)
    fp = scalar_poly(sp, 1.0, [1.0])
    traj = oracle_solve(fp, None, [1.0, 0.0], TimeGrid.uniform(1.0, 4))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'traj.csv')
        write_trajectory_csv(sp, traj, path)
        frame = pd.read_csv(path)
    assert list(frame.columns) == ['t', 're_0', 'im_0', 're_1', 'im_1', 'norm_H', 'norm_V']
    assert len(frame) == 5
    assert abs(frame['re_0'].iloc[-1] - math.exp(-1)) < 1e-7
    print("✅ 轨迹 CSV")


def main():
    print("🧪 求解器测试")
    print("=" * 50)
    tests = [test_time_grid, test_oracle_decay, test_oracle_time_dependent, test_frozen_parts,
             test_autonomous_operators_vanish, test_at_solver_matches_exact, test_q_ladder_monotone,
             test_heat_agrees_with_oracle, test_solution_norms, test_rough_path_without_shift,
             test_iteration_limit, test_q_identity_residual, test_trajectory_csv]
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
