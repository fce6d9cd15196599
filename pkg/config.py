import os
from dotenv import load_dotenv

load_dotenv()

# 日志配置
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
LOG_FILE = os.getenv('LOG_FILE', 'evolab.log')

# Hilbert 对配置
HERMITIAN_TOL = float(os.getenv('HERMITIAN_TOL', '1e-10'))

# 假设检查配置
VANISHING_SLOPE = float(os.getenv('VANISHING_SLOPE', '0.01'))  # 对数斜率低于 -VANISHING_SLOPE 视为趋于零

# 时间网格与求积配置
DEFAULT_GRID_CELLS = int(os.getenv('DEFAULT_GRID_CELLS', '64'))
DEFAULT_GAUSS_ORDER = int(os.getenv('DEFAULT_GAUSS_ORDER', '4'))
AFFINE_QUAD_ORDER = int(os.getenv('AFFINE_QUAD_ORDER', '8'))
GRADED_MIN_WIDTH = float(os.getenv('GRADED_MIN_WIDTH', '1e-4'))  # 相对于 T

# 求解器配置
ORACLE_SUBSTEPS = int(os.getenv('ORACLE_SUBSTEPS', '8'))
MU_LADDER_BASE = float(os.getenv('MU_LADDER_BASE', '10'))
DEFAULT_MU_CAP = float(os.getenv('DEFAULT_MU_CAP', '1000'))
NEUMANN_TOL = float(os.getenv('NEUMANN_TOL', '1e-12'))
NEUMANN_MAX_ITER = int(os.getenv('NEUMANN_MAX_ITER', '200'))
POWER_ITERATIONS = int(os.getenv('POWER_ITERATIONS', '30'))
POWER_TOL = float(os.getenv('POWER_TOL', '1e-6'))

# 扇形估计配置
CONTOUR_POINTS = int(os.getenv('CONTOUR_POINTS', '400'))
CONTOUR_RADIUS_CAP = float(os.getenv('CONTOUR_RADIUS_CAP', '50'))
LAMBDA_RADII = int(os.getenv('LAMBDA_RADII', '40'))
S_SAMPLES = int(os.getenv('S_SAMPLES', '61'))

# 随机数种子
DEFAULT_SEED = int(os.getenv('DEFAULT_SEED', '20240601'))
