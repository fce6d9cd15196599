#!/usr/bin/env python3
import argparse
import json
import logging
import sys

import numpy as np

from affine import build_affine, verify_affine_bounds
from config import LOG_FILE, LOG_LEVEL
from forms import CoercivityError, HypothesisError, check_form_bounds, check_hypotheses, estimate_constants, \
    measure_modulus
from problem_config import ConfigError, ProblemConfig, load_config
from semigroup import ContourResolutionError, SectorError, SectorSpec, contour_check, sector_uniformity, \
    verify_sector_estimates
from solver import ATSolver, ContractionError, ConvergenceError, SolverError, oracle_solve, p_norm_estimate, \
    write_trajectory_csv
from study import (convergence_study, envelope_dominance, lions_ratio, random_data_batch, rate_fit, uniformity_check,
                   vprime_stability, weak_vs_strong_report, write_rows_csv)

DOMAIN_ERRORS = (HypothesisError, CoercivityError, SectorError, ContourResolutionError,
                 ContractionError, ConvergenceError, SolverError)


def setup_logging():
    """设置日志：标准输出留给 JSON 与 CSV，日志写到 stderr 与日志文件"""
    handlers = [logging.StreamHandler(sys.stderr)]
    if LOG_FILE:
        handlers.insert(0, logging.FileHandler(LOG_FILE, encoding='utf-8'))
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
    )


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, complex):
        return {'re': value.real, 'im': value.imag}
    return value


def emit_json(report, out: str = '-'):
    text = json.dumps(_plain(report), indent=2, sort_keys=True)
    if out == '-':
        print(text)
    else:
        with open(out, 'w', encoding='utf-8') as fh:
            fh.write(text + '\n')


def fail_json(error: Exception):
    """领域失败的诊断 JSON 写到 stderr"""
    report = {'error': type(error).__name__, 'message': str(error)}
    if isinstance(error, ContractionError):
        report['ladder'] = error.ladder
    if isinstance(error, ConvergenceError):
        report['last_increment'] = error.last_increment
    print(json.dumps(_plain(report), indent=2, sort_keys=True), file=sys.stderr)


def _affine_family(config: ProblemConfig):
    return [build_affine(config.form, m, config.study.quad_order) for m in config.study.mesh_ladder]


def inspect_command(config: ProblemConfig, out: str) -> int:
    """结构常数、连续模与假设检查"""
    logger = logging.getLogger(__name__)
    logger.info(f"🔍 检查问题 {config.source_path}")
    constants = estimate_constants(config.form, gamma=config.gamma)
    bounds = check_form_bounds(config.form, constants)
    profile = measure_modulus(config.form, config.gamma)
    report = check_hypotheses(config.form, _affine_family(config), config.gamma, base_profile=profile)

    if out != '-':
        print(f"📊 常数: M={constants.M:.6g}, α={constants.alpha:.6g}, β={constants.beta:g}, θ={constants.theta:.6g}")
        print(f"📊 连续模: Dini={profile.dini_integral:.6g}, sup={profile.sup_ratio:.6g}, 拟合={profile.fit}")
        for name, result in report.results.items():
            mark = {'pass': '✅', 'fail': '❌', 'assumed': '➖'}[result.status]
            print(f"{mark} {name}: {result.status}")

    emit_json({
        'constants': constants.to_dict(),
        'form_bounds': bounds,
        'modulus': {
            'fit': None if profile.fit is None else {'C': profile.fit.C, 'eta': profile.fit.eta},
            'dini_integral': profile.dini_integral,
            'sup_ratio': profile.sup_ratio,
            'vanishing_ratio': profile.vanishing_ratio,
            'omega_T': profile.omega(config.horizon),
        },
        **report.to_dict(),
    }, out)
    return 0 if report.all_passed else 1


def _non_increasing(values, slack: float = 1e-9) -> bool:
    return all(b <= a + slack for a, b in zip(values, values[1:]))


def verify_command(config: ProblemConfig, out: str) -> int:
    """扇形估计、仿射界与 Q/P 收缩检查"""
    logger = logging.getLogger(__name__)
    logger.info(f"🔍 数值验证 {config.source_path}")
    fp, sp, gamma = config.form, config.space, config.gamma
    constants = estimate_constants(fp, gamma=gamma)
    spec = SectorSpec.from_constants(constants, sp)
    family = _affine_family(config)
    profile = measure_modulus(fp, gamma)
    grid = config.grid()

    sector = {'base': [r.to_dict() for r in verify_sector_estimates(sp, fp, constants, spec)]}
    for afp in family[:3]:
        sector[f"m={afp.subdivision.intervals}"] = [
            r.to_dict() for r in verify_sector_estimates(sp, afp, constants, spec)]
    affine = [verify_affine_bounds(fp, afp, gamma, profile=profile).to_dict() for afp in family]
    uniformity = sector_uniformity(sp, [fp] + family[:3], constants, spec, np.linspace(0.0, config.horizon, 5))
    contour = contour_check(sp, fp.eval(0.0), 1.0, spec, beta=constants.beta)

    solver = ATSolver(fp, grid)
    q_ladder = [solver.q_norm(mu) for mu in (0.0, 10.0, 100.0, 1000.0)]
    q_values = [e['q'] for e in q_ladder]
    mu, q, _ = solver.choose_mu(config.solver.mu_cap)
    family_q = {afp.subdivision.intervals: ATSolver(afp, grid).q_norm(mu)['q'] for afp in family}
    # 仿射族的 q 与原路径同阶
    family_ok = all(v < 0.95 and v <= 2 * q + 1e-8 for v in family_q.values())
    q_ok = _non_increasing(q_values) and (fp.is_autonomous or min(q_values) < 0.5) and family_ok

    passed = (all(r['passed'] for reports in sector.values() for r in reports)
              and all(r['passed'] for r in affine) and q_ok)
    emit_json({
        'constants': constants.to_dict(),
        'sector': {'theta': spec.theta, 'phi': spec.phi, 'estimates': sector, 'uniformity': uniformity},
        'contour': contour,
        'affine': affine,
        'q_ladder': q_ladder,
        'q_family': family_q,
        'mu': mu,
        'q': q,
        'p_norm': p_norm_estimate(fp, grid, solver),
        'passed': passed,
    }, out)
    logger.info(f"{'✅ 验证通过' if passed else '❌ 验证未通过'}")
    return 0 if passed else 1


def solve_command(config: ProblemConfig, out: str, method: str) -> int:
    """求解并写出轨迹 CSV"""
    logger = logging.getLogger(__name__)
    grid = config.grid()
    logger.info(f"🔍 求解 {config.source_path}: 方法 {method}, {grid.cells} 个单元")
    if method == 'oracle':
        traj = oracle_solve(config.form, config.source, config.u0, grid, substeps=config.solver.substeps)
    else:
        traj = ATSolver(config.form, grid).solve(config.source, config.u0, mu_cap=config.solver.mu_cap,
                                                 tol=config.solver.tol, max_iter=config.solver.max_iter)
    write_trajectory_csv(config.space, traj, out)
    logger.info("✅ 求解完成")
    return 0


def study_command(config: ProblemConfig, out: str, method: str, threads: int) -> int:
    """仿射逼近阶梯上的收敛实验；摘要附带随机数据批上的一致性与稳定性检查"""
    logger = logging.getLogger(__name__)
    grid = config.grid()
    ladder = config.study.mesh_ladder
    rows = convergence_study(
        config.form, config.gamma, ladder, config.source, config.u0,
        grid=grid, method=method, substeps=config.solver.substeps, mu_cap=config.solver.mu_cap,
        tol=config.solver.tol, max_iter=config.solver.max_iter, threads=threads,
        record_runtime=config.study.record_runtime, quad_order=config.study.quad_order)
    write_rows_csv(rows, out)

    dominance = envelope_dominance(rows)
    summary = {'envelope_dominance': dominance, 'weak_vs_strong': weak_vs_strong_report(rows)}
    if sum(r.ok for r in rows) >= 3:
        summary['rates'] = rate_fit(rows)
    failed = [r.m for r in rows if not r.ok]
    if not failed:
        batch = random_data_batch(config.space, config.horizon, config.study.batch_size, seed=config.study.seed)
        substeps = config.solver.substeps
        summary['data_batch'] = {
            'size': len(batch),
            'seed': config.study.seed,
            'uniformity': uniformity_check(config.form, config.gamma, ladder[-1], batch, grid=grid,
                                           method=method, substeps=substeps),
            'vprime_stability': vprime_stability(config.form, ladder, batch, grid=grid, substeps=substeps),
            'lions_ratio': lions_ratio(config.form, batch, grid=grid, substeps=substeps),
        }
    logger.info(f"📊 研究摘要: {json.dumps(_plain(summary), sort_keys=True, default=str)}")
    if failed:
        logger.error(f"❌ 失败的行: m={failed}")
        return 1
    return 0 if dominance['passed'] else 1


def main(argv=None) -> int:
    setup_logging()
    logger = logging.getLogger(__name__)

    parser = argparse.ArgumentParser(description='非自治发展方程逼近实验')
    subparsers = parser.add_subparsers(dest='command', help='可用命令')

    for name, text in (('inspect', '结构常数与假设检查'), ('verify', '扇形估计与收缩检查'),
                       ('solve', '求解并输出轨迹'), ('study', '收敛实验')):
        sub = subparsers.add_parser(name, help=text)
        sub.add_argument('--config', required=True, help='JSON 问题描述文件')
        sub.add_argument('--out', default='-', help="输出路径, '-' 表示标准输出")
        if name in ('solve', 'study'):
            sub.add_argument('--method', choices=['oracle', 'at'], default=None, help='求解方法（覆盖配置）')
        if name == 'study':
            sub.add_argument('--threads', type=int, default=1, help='并行线程数')

    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2

    try:
        config = load_config(args.config)
        method = getattr(args, 'method', None) or config.solver.method
        if args.command == 'inspect':
            return inspect_command(config, args.out)
        if args.command == 'verify':
            return verify_command(config, args.out)
        if args.command == 'solve':
            return solve_command(config, args.out, method)
        return study_command(config, args.out, method, max(1, args.threads))
    except ConfigError as e:
        logger.error(f"❌ 配置错误: {e}")
        return 2
    except DOMAIN_ERRORS as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        fail_json(e)
        return 1


if __name__ == '__main__':
    sys.exit(main())
