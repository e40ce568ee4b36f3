"""Score maps, keypoints and detector settings."""

from dataclasses import dataclass

import numpy as np

from deformfeat.constants import (
    BORDER_MARGIN,
    DEFAULT_TOP_K,
    EDGE_THRESHOLD,
    INNETWORK_RANGE,
    INNETWORK_SCALES,
    LEVEL_DILATIONS,
    LEVEL_WEIGHTS,
    NMS_SIZE,
    SCORE_MIN,
)

VALID_SCORING = ("peakiness", "d2net-ratio")
VALID_FUSION = ("multilevel", "pyramid", "in-network", "single")


@dataclass
class ScoreMap:
    """Detection scores (H, W, 1) and the level weights that produced them."""

    values: np.ndarray
    level_weights: tuple[float, ...] = ()

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def plane(self) -> np.ndarray:
        """Scores as a 2-D array."""
        return self.values[..., 0]


@dataclass(frozen=True)
class Keypoint:
    """Sub-pixel keypoint in original image coordinates."""

    x: float
    y: float
    score: float
    level_hint: str = "fused"
    pyramid_scale: float = 1.0


@dataclass(frozen=True)
class DetectorConfig:
    """Scoring, fusion and post-processing settings."""

    scoring: str = "peakiness"
    fusion: str = "multilevel"
    level_weights: tuple[float, ...] = LEVEL_WEIGHTS
    level_dilations: tuple[int, ...] = LEVEL_DILATIONS
    nms_size: int = NMS_SIZE
    edge_threshold: float = EDGE_THRESHOLD
    score_min: float = SCORE_MIN
    top_k: int = DEFAULT_TOP_K
    border: int = BORDER_MARGIN
    innetwork_scales: int = INNETWORK_SCALES
    innetwork_range: float = INNETWORK_RANGE

    def __post_init__(self):
        if self.scoring not in VALID_SCORING:
            raise ValueError(f"Unknown scoring: {self.scoring}. Valid: {', '.join(VALID_SCORING)}")
        if self.fusion not in VALID_FUSION:
            raise ValueError(f"Unknown fusion: {self.fusion}. Valid: {', '.join(VALID_FUSION)}")
        if any(w <= 0 for w in self.level_weights):
            raise ValueError(f"Level weights must be positive, got {self.level_weights}")
        if any(d < 1 for d in self.level_dilations):
            raise ValueError(f"Level dilations must be >= 1, got {self.level_dilations}")
        if len(self.level_weights) != len(self.level_dilations):
            raise ValueError("Level weights and dilations must have the same length")
        if self.nms_size < 3 or self.nms_size % 2 == 0:
            raise ValueError(f"NMS size must be odd and >= 3, got {self.nms_size}")
        if self.edge_threshold <= 0:
            raise ValueError(f"Edge threshold must be positive, got {self.edge_threshold}")
        if self.top_k < 1:
            raise ValueError(f"top-K must be >= 1, got {self.top_k}")
        if self.border < 1:
            raise ValueError(f"Border margin must be >= 1, got {self.border}")
        if self.innetwork_scales < 1 or self.innetwork_range < 1:
            raise ValueError("In-network multi-scale needs >= 1 scale and range >= 1")

    @property
    def nms_radius(self) -> int:
        return self.nms_size // 2
