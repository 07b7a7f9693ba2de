"""
Format constants and default values
"""

# Tensor container format
TENSOR_MAGIC = b"T1MC"
TENSOR_VERSION = 1
HEADER_PREFIX_SIZE = 8  # magic(4) + version + kind + ndim + reserved

KIND_IMAGE = 1
KIND_FIELD = 2
KIND_MASK = 3

KIND_NAMES = {
    KIND_IMAGE: "image",
    KIND_FIELD: "field",
    KIND_MASK: "mask",
}

TENSOR_SUFFIX = ".t1mc"

# Label ids
LABEL_BACKGROUND = 0
LABEL_MYOCARDIUM = 1
LABEL_BLOOD = 2

# Similarity weights a, b, c, d of NCC, MI, NGF, MIND
DEFAULT_WLS_WEIGHTS = (1.1, 4.0, 3.3, 8.3)

# Anti-folding and smoothness weights
DEFAULT_LAMBDA1 = 1000.0
DEFAULT_LAMBDA2 = 8.0

# Metric defaults
DEFAULT_MI_BINS = 32
# NGF edge threshold relative to the mean gradient magnitude of each image
DEFAULT_NGF_EPS = 1e-2
DEFAULT_MIND_PATCH_RADIUS = 1
DEFAULT_MIND_SIGMA = 0.5
DEFAULT_MIND_VARIANCE_FLOOR = 1e-6
DEFAULT_MIND_ABS_EPS = 1e-6

# Solver defaults
DEFAULT_LEVELS = 3
DEFAULT_ITERS_PER_LEVEL = [100, 100, 50]
DEFAULT_AFFINE_STEP = 0.1
DEFAULT_FIELD_STEP = 0.5
DEFAULT_CONVERGENCE_TOL = 1e-5

# Frames with variance below this fraction of the reference range squared are flagged
LOW_SIGNAL_VARIANCE_FRACTION = 1e-4

# Three-parameter fit
FIT_T1STAR_MIN_MS = 50.0
FIT_T1STAR_MAX_MS = 5000.0
FIT_GRID_SIZE = 50
FIT_GAUSS_NEWTON_STEPS = 20
FIT_MIN_B_OVER_A = 1.0 + 1e-3

# Phantom defaults
PHANTOM_HEIGHT = 144
PHANTOM_WIDTH = 160
PHANTOM_FRAMES = 11
PHANTOM_TI_MIN_MS = 100.0
PHANTOM_TI_MAX_MS = 3000.0
PHANTOM_T1_MYO_MS = 1100.0
PHANTOM_T1_BLOOD_MS = 1700.0
PHANTOM_T1_BACKGROUND_MS = 300.0
PHANTOM_SIGNAL_A = 1.0
PHANTOM_SIGNAL_B = 2.0
PHANTOM_BUMP_COUNT = 3
PHANTOM_BUMP_SIGMA_PX = 12.0

# Report schema
REPORT_CSV_COLUMNS = ["method", "frame", "dsc", "hd_endo", "hd_epi", "folding", "seconds"]
METHOD_UNCORRECTED = "ORG"
METHOD_CORRECTED = "WLs+BLOC"

# Ablation sweep
ABLATION_METRICS = {
    "NCC-only": (1.0, 0.0, 0.0, 0.0),
    "MI-only": (0.0, 1.0, 0.0, 0.0),
    "NGF-only": (0.0, 0.0, 1.0, 0.0),
    "MIND-only": (0.0, 0.0, 0.0, 1.0),
    "WLs": DEFAULT_WLS_WEIGHTS,
}
ABLATION_LAMBDA1 = [0.0, DEFAULT_LAMBDA1]
ABLATION_VARIANTS = ["full", "no_affine", "no_bloc", "weak_supervision"]

# CLI exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3
