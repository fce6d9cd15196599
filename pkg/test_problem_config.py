#!/usr/bin/env python3
"""
测试问题描述文件的解析
"""
import json
import os
import sys
import tempfile

import numpy as np

from problem_config import ConfigError, load_config, parse_config

BASE = {
    'space': {'dim': 2, 'gram': 'diag', 'h_diag': [1.0, 1.0], 'v_diag': [1.0, 4.0]},
    'form': {'family': 'scalar-power', 'params': {'a': 1.0, 'b': 1.0, 'eta': 0.75}},
    'gamma': 0.5,
    'horizon': 1.0,
    'data': {
        'f': {'family': 'modes', 'modes': [{'index': 1, 'amplitude': 2.0}]},
        'u0': {'family': 'vector', 'value': [1.0, 0.0], 'value_imag': [0.0, 1.0]},
    },
    'solver': {'cells': 16, 'mu_cap': 100},
    'study': {'mesh_ladder': [2, 4, 8]},
}


def with_changes(**changes):
    raw = json.loads(json.dumps(BASE))
    raw.update(changes)
    return raw


def expect_error(raw, fragment):
    try:
        parse_config(raw)
    except ConfigError as e:
        assert fragment in str(e), str(e)
        return
    assert False, f"应抛出 ConfigError ({fragment})"


def test_valid_config():
    """完整配置解析为 ProblemConfig"""
    config = parse_config(BASE)
    assert config.space.dim == 2 and config.gamma == 0.5
    assert np.allclose(config.u0, [1.0, 1j])
    assert np.allclose(config.source(0.3), [0.0, 2.0])
    assert config.solver.cells == 16 and config.solver.mu_cap == 100
    assert config.solver.method == 'at'
    assert config.study.mesh_ladder == [2, 4, 8] and config.study.batch_size == 20
    assert config.grid().cells == 16
    assert not config.form.is_autonomous
    print("✅ 合法配置")


def test_defaults():
    """省略 data/solver/study 时使用默认值"""
    raw = with_changes()
    for key in ('data', 'solver', 'study'):
        raw.pop(key)
    config = parse_config(raw)
    assert config.source is None
    assert np.allclose(config.u0, 0.0)
    assert config.study.mesh_ladder == [4, 8, 16, 32, 64]
    print("✅ 默认值")


def test_unknown_key():
    """未知键报告键路径"""
    raw = with_changes(solver={'cells': 16, 'speed': 'fast'})
    expect_error(raw, 'solver')
    expect_error(with_changes(extra=1), '<root>')
    print("✅ 未知键被拒绝")


def test_bad_values():
    """取值越界与维数不一致"""
    expect_error(with_changes(gamma=1.0), 'gamma')
    expect_error(with_changes(horizon=0), 'horizon')
    expect_error(with_changes(data={'u0': {'family': 'vector', 'value': [1.0]}}), 'dim=2')
    expect_error(with_changes(form={'family': 'scalar-power', 'params': {'coeffs': [1.0]}}), 'space/form')
    expect_error(with_changes(study={'mesh_ladder': [8, 4]}), 'mesh_ladder')
    print("✅ 非法取值被拒绝")


def test_json_syntax_error():
    """JSON 语法错误报告行号"""
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'bad.json')
        with open(path, 'w', encoding='utf-8') as fh:
            fh.write('{\n  "gamma": 0.5,\n  "horizon": ,\n}\n')
        try:
            load_config(path)
            assert False, "应抛出 ConfigError"
        except ConfigError as e:
            assert '第 3 行' in str(e), str(e)
        try:
            load_config(os.path.join(tmp, 'missing.json'))
            assert False, "应抛出 ConfigError"
        except ConfigError:
            pass
    print("✅ JSON 语法错误")


def test_table_form_from_file():
    """table 族从相对路径的 .npz 读取"""
    with tempfile.TemporaryDirectory() as tmp:
        np.savez(os.path.join(tmp, 'path.npz'), times=np.array([0.0, 1.0]),
                 matrices=np.array([[[1.0]], [[3.0]]]))
        raw = {'space': {'dim': 1, 'gram': 'identity'}, 'form': {'family': 'table', 'path': 'path.npz'},
               'gamma': 0.0, 'horizon': 1.0}
        path = os.path.join(tmp, 'problem.json')
        with open(path, 'w', encoding='utf-8') as fh:
            json.dump(raw, fh)
        config = load_config(path)
    assert abs(config.form.eval(0.5)[0, 0] - 2.0) < 1e-12
    print("✅ 采样表形式路径")


def main():
    print("🧪 配置解析测试")
    print("=" * 50)
    tests = [test_valid_config, test_defaults, test_unknown_key, test_bad_values, test_json_syntax_error,
             test_table_form_from_file]
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
