"""
问题描述文件 (JSON) 的严格解析
未知键一律拒绝；语法错误报告行列，结构错误报告键路径
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import jsonschema
import numpy as np

from config import (AFFINE_QUAD_ORDER, DEFAULT_GAUSS_ORDER, DEFAULT_GRID_CELLS, DEFAULT_MU_CAP, DEFAULT_SEED,
                    NEUMANN_MAX_ITER, NEUMANN_TOL, ORACLE_SUBSTEPS)
from form_families import FormFamily, GramKind, build_family, build_gram
from forms import FormPath
from hilbert import SpacePair
from solver import TimeGrid

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """配置文件无法解析或不符合结构"""


_NUMBER_LIST = {'type': 'array', 'items': {'type': 'number'}}
_MATRIX = {'type': 'array', 'items': _NUMBER_LIST}
_MODES = {
    'type': 'array',
    'items': {
        'type': 'object',
        'properties': {'index': {'type': 'integer', 'minimum': 0}, 'amplitude': {'type': 'number'}},
        'required': ['index', 'amplitude'],
        'additionalProperties': False,
    },
}


def _block(properties: Dict, required: Optional[List[str]] = None) -> Dict:
    return {'type': 'object', 'properties': properties, 'required': required or [],
            'additionalProperties': False}


SCHEMA = _block({
    'space': _block({
        'dim': {'type': 'integer', 'minimum': 1},
        'gram': {'enum': [k.value for k in GramKind]},
        'h_diag': _NUMBER_LIST,
        'v_diag': _NUMBER_LIST,
        'gram_H': _MATRIX,
        'gram_V': _MATRIX,
    }, ['dim', 'gram']),
    'form': _block({
        'family': {'enum': [f.value for f in FormFamily]},
        'params': _block({
            'coeffs': _NUMBER_LIST,
            'a': {'type': 'number'},
            'b': {'type': 'number'},
            'eta': {'type': 'number', 'minimum': 0},
            'nu': {'type': 'number'},
            'eigs': _NUMBER_LIST,
            'rate': {'type': 'number'},
            'times': _NUMBER_LIST,
            'matrices': {'type': 'array', 'items': _MATRIX},
            'matrices_imag': {'type': 'array', 'items': _MATRIX},
        }),
        'path': {'type': 'string'},
        'interpolation': {'enum': ['linear', 'previous']},
    }, ['family']),
    'gamma': {'type': 'number', 'minimum': 0, 'exclusiveMaximum': 1},
    'horizon': {'type': 'number', 'exclusiveMinimum': 0},
    'data': _block({
        'f': _block({
            'family': {'enum': ['zero', 'constant', 'modes', 'table']},
            'value': _NUMBER_LIST,
            'value_imag': _NUMBER_LIST,
            'modes': _MODES,
            'times': _NUMBER_LIST,
            'values': _MATRIX,
        }, ['family']),
        'u0': _block({
            'family': {'enum': ['zero', 'vector', 'modes']},
            'value': _NUMBER_LIST,
            'value_imag': _NUMBER_LIST,
            'modes': _MODES,
        }, ['family']),
    }),
    'solver': _block({
        'cells': {'type': 'integer', 'minimum': 1},
        'gauss_order': {'type': 'integer', 'minimum': 1},
        'mu_cap': {'type': 'number', 'minimum': 0},
        'tol': {'type': 'number', 'exclusiveMinimum': 0},
        'max_iter': {'type': 'integer', 'minimum': 1},
        'substeps': {'type': 'integer', 'minimum': 1},
        'method': {'enum': ['oracle', 'at']},
    }),
    'study': _block({
        'mesh_ladder': {'type': 'array', 'items': {'type': 'integer', 'minimum': 1}, 'minItems': 1},
        'batch_size': {'type': 'integer', 'minimum': 1},
        'seed': {'type': 'integer', 'minimum': 0},
        'record_runtime': {'type': 'boolean'},
        'quad_order': {'type': 'integer', 'minimum': 1},
    }),
}, ['space', 'form', 'gamma', 'horizon'])


@dataclass(frozen=True)
class SolverSettings:
    cells: int = DEFAULT_GRID_CELLS
    gauss_order: int = DEFAULT_GAUSS_ORDER
    mu_cap: float = DEFAULT_MU_CAP
    tol: float = NEUMANN_TOL
    max_iter: int = NEUMANN_MAX_ITER
    substeps: int = ORACLE_SUBSTEPS
    method: str = 'at'


@dataclass(frozen=True)
class StudySettings:
    mesh_ladder: List[int] = field(default_factory=lambda: [4, 8, 16, 32, 64])
    batch_size: int = 20
    seed: int = DEFAULT_SEED
    record_runtime: bool = False
    quad_order: int = AFFINE_QUAD_ORDER


@dataclass
class ProblemConfig:
    """解析后的完整问题描述"""
    source_path: str
    raw: Dict
    space: SpacePair
    form: FormPath
    gamma: float
    horizon: float
    source: Optional[Callable[[float], np.ndarray]]
    u0: np.ndarray
    solver: SolverSettings
    study: StudySettings

    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.horizon, self.solver.cells, self.solver.gauss_order)


def _complex_vector(block: Dict, dim: int, where: str) -> np.ndarray:
    real = np.asarray(block.get('value', []), dtype=float)
    imag = np.asarray(block.get('value_imag', np.zeros(len(real))), dtype=float)
    if len(real) != dim or len(imag) != dim:
        raise ConfigError(f"{where}: value/value_imag 的长度必须为 dim={dim}")
    return real + 1j * imag


def _mode_vector(block: Dict, dim: int, where: str) -> np.ndarray:
    vec = np.zeros(dim, dtype=complex)
    for mode in block.get('modes', []):
        if mode['index'] >= dim:
            raise ConfigError(f"{where}: 模式下标 {mode['index']} 超出 dim={dim}")
        vec[mode['index']] += mode['amplitude']
    return vec


def _build_source(block: Optional[Dict], dim: int, horizon: float):
    if block is None or block['family'] == 'zero':
        return None
    family = block['family']
    if family in ('constant', 'modes'):
        vec = (_complex_vector(block, dim, 'data/f') if family == 'constant'
               else _mode_vector(block, dim, 'data/f'))
        return lambda t: vec
    times = np.asarray(block.get('times', []), dtype=float)
    values = np.asarray(block.get('values', []), dtype=float)
    if values.shape != (len(times), dim) or len(times) < 2:
        raise ConfigError(f"data/f: table 需要至少两个时刻且 values 形状为 (len(times), {dim})")
    if np.any(np.diff(times) <= 0) or times[0] > 0 or times[-1] < horizon:
        raise ConfigError("data/f: times 必须严格升序并覆盖 [0, T]")
    return lambda t: np.array([np.interp(t, times, values[:, k]) for k in range(dim)], dtype=complex)


def _build_initial(block: Optional[Dict], dim: int) -> np.ndarray:
    if block is None or block['family'] == 'zero':
        return np.zeros(dim, dtype=complex)
    if block['family'] == 'vector':
        return _complex_vector(block, dim, 'data/u0')
    return _mode_vector(block, dim, 'data/u0')


def _form_params(form: Dict) -> Dict:
    params = dict(form.get('params', {}))
    if 'matrices' in params:
        real = np.asarray(params.pop('matrices'), dtype=float)
        imag = np.asarray(params.pop('matrices_imag', np.zeros_like(real)), dtype=float)
        if imag.shape != real.shape:
            raise ConfigError("form/params: matrices_imag 与 matrices 形状不一致")
        params['matrices'] = real + 1j * imag
    return params


def parse_config(raw: Dict, base_dir: str = '.', source_path: str = '<memory>') -> ProblemConfig:
    """
    校验并构造 ProblemConfig
    Args:
        raw: 已解码的 JSON 对象
        base_dir: 相对路径（采样表）的基准目录
    Raises:
        ConfigError: 结构或取值错误
    """
    try:
        jsonschema.validate(instance=raw, schema=SCHEMA)
    except jsonschema.ValidationError as e:
        key = '/'.join(str(p) for p in e.absolute_path) or '<root>'
        raise ConfigError(f"{source_path}: 键 {key}: {e.message}")

    horizon = float(raw['horizon'])
    space_block, form_block = raw['space'], raw['form']
    dim = space_block['dim']
    try:
        space = build_gram(space_block['gram'], dim, space_block.get('h_diag'), space_block.get('v_diag'),
                           space_block.get('gram_H'), space_block.get('gram_V'))
        table_path = form_block.get('path')
        if table_path is not None and not os.path.isabs(table_path):
            table_path = os.path.join(base_dir, table_path)
        form = build_family(space, horizon, form_block['family'], _form_params(form_block), table_path,
                            form_block.get('interpolation', 'linear'))
    except (TypeError, ValueError, OSError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{source_path}: space/form: {e}")

    data = raw.get('data', {})
    study = dict(raw.get('study', {}))
    if 'mesh_ladder' in study:
        ladder = study['mesh_ladder']
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError(f"{source_path}: 键 study/mesh_ladder: 必须严格升序")
    return ProblemConfig(
        source_path=source_path,
        raw=raw,
        space=space,
        form=form,
        gamma=float(raw['gamma']),
        horizon=horizon,
        source=_build_source(data.get('f'), dim, horizon),
        u0=_build_initial(data.get('u0'), dim),
        solver=SolverSettings(**raw.get('solver', {})),
        study=StudySettings(**study),
    )


def load_config(path: str) -> ProblemConfig:
    """读取并解析 JSON 问题描述"""
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"无法读取配置文件 {path}: {e}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: 第 {e.lineno} 行第 {e.colno} 列: {e.msg}")
    config = parse_config(raw, os.path.dirname(os.path.abspath(path)), path)
    logger.debug(f"已加载配置 {path}: 形式族 {config.form.descriptor.get('family')}, N={config.space.dim}")
    return config
