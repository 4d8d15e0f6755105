"""
This module includes all consts used in this project
"""

# version
HPROJ_VERSION = "0.1.0"

# Env
ENV_WORKERS = "HPROJ_WORKERS"

# MATF binary matrix format
MATF_MAGIC = b"MATF"
MATF_VERSION = 1
# magic: 4 bytes; version, rows, cols: u32 little endian each
MATF_HEADER_FORMAT = "<4sIII"

# .hproj container
CONTAINER_VERSION = 1
CONTAINER_SUFFIX = ".hproj"

# Tolerances
SYMMETRY_TOL = 1e-10
ORTHOGONALITY_TOL = 1e-8
REFLECTOR_NORM_MIN = 1e-12
PSD_CLAMP_TOL = 1e-10
PSD_ERROR_TOL = 1e-6
UNIT_NORM_TOL = 1e-8
FRECHET_RADICAND_TOL = 1e-8
# eigen magnitudes closer than this are one degenerate eigenspace
EIGEN_CLUSTER_TOL = 1e-6

# One-sided Jacobi
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60
# columns whose squared norm falls under (JACOBI_RANK_TOL * |A|_F)^2 are treated as null
JACOBI_RANK_TOL = 1e-13

# Projector
DEFAULT_RANK = 10

# Accumulation methods
METHOD_NAIVE = "naive"
METHOD_WY = "wy"
METHODS = (METHOD_NAIVE, METHOD_WY)
BENCH_MIN_REPS = 3
CHECKSUM_DIGITS = 6

# Metrics
PPL_EPS = 1e-4
PIPL_EPS = 1e-2
# unit-strength perturbation for generators with a coarser latent scale
PIPL_EPS_STRONG = 1.0
METRIC_SAMPLES = 10000
SLERP_MIN_ANGLE = 1e-7
ALPHA_GRID = (-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)

# Nonlinearity
NONLINEARITY_IDENTITY = "identity"
NONLINEARITY_TANH = "tanh"
NONLINEARITIES = (NONLINEARITY_IDENTITY, NONLINEARITY_TANH)

# Toy experiment
INIT_RANDOM = "random"
INIT_NEAREST = "nearest"
INITS = (INIT_RANDOM, INIT_NEAREST)
# first-layer weight: Householder projector or unconstrained dense matrix
LAYER_PROJECTOR = "projector"
LAYER_DENSE = "dense"
LAYERS = (LAYER_PROJECTOR, LAYER_DENSE)
LOSS_MSE = "mse"
GAIN_RANGE = (1.0, 4.0)
TOY_OUT_DIM = 16
TOY_TRAIN_SIZE = 1024
TOY_BIAS_SCALE = 0.5
TOY_HEAD_SCALE = 0.1

# Event
EVENT_INIT = "init"
EVENT_STEP = "step"
EVENT_FINISH = "finish"

# Report fields that depend on wall clock
TIMING_FIELDS = ("wall_ms", "ms_median")
