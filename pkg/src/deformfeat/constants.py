"""Centralized constants for deformfeat.

Paths, file magics and the hyper-parameters shared by several modules.
"""

from pathlib import Path

# === Paths ===
CONFIG_DIR = Path.home() / ".config" / "deformfeat"
CACHE_DIR = Path.home() / ".cache" / "deformfeat"

CONFIG_PATH = CONFIG_DIR / "config.ini"
LOGS_DIR = CACHE_DIR / "logs"

# === File formats ===
WEIGHTS_MAGIC = b"ASLW"
WEIGHTS_VERSION = 1
KEYPOINTS_TEXT_MAGIC = "ASLF1"
KEYPOINTS_BINARY_MAGIC = b"ASLB"

# === Numerics ===
STD_CLAMP = 1e-6
DESCRIPTOR_DIM = 128

# === Detection defaults ===
LEVEL_WEIGHTS = (1.0, 2.0, 3.0)
LEVEL_DILATIONS = (3, 2, 1)
NMS_SIZE = 3
EDGE_THRESHOLD = 10.0
SCORE_MIN = 0.5
BORDER_MARGIN = 8
DEFAULT_TOP_K = 5000

# Multi-scale variants
PYRAMID_SCALE_STEP = 2.0**0.5
PYRAMID_BLUR_SIGMA = 0.8
PYRAMID_MIN_SIDE = 128
PYRAMID_MAX_SIDE = 2048
INNETWORK_SCALES = 5
INNETWORK_RANGE = 2.0**0.5

# === Matching / evaluation defaults ===
RATIO_DEFAULT = 0.8
RATIO_D2NET = 0.95
RANSAC_ITERATIONS = 2000
RANSAC_SED_THRESHOLD = 1e-4
RECALL_THRESHOLD = 0.05
VIRTUAL_CORRESPONDENCES = 300
MMA_THRESHOLDS = tuple(range(1, 11))
REPEATABILITY_THRESHOLD = 3.0

# === Loss defaults ===
MARGIN_POSITIVE = 0.2
MARGIN_NEGATIVE = 1.0
SAFE_RADIUS = 3
CIRCLE_MARGIN = 0.1
CIRCLE_GAMMA = 512.0
MIN_CORRESPONDENCES = 32
MAX_CORRESPONDENCES = 512

# === Gradient checks ===
GRADCHECK_STEP = 1e-4
GRADCHECK_TOL = 1e-4


def ensure_dir(path: Path) -> Path:
    """Ensure directory exists, creating if necessary.

    Args:
        path: Directory path to create

    Returns:
        The same path (for chaining)
    """
    path.mkdir(parents=True, exist_ok=True)
    return path
