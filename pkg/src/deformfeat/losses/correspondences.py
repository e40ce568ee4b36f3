"""Ground-truth correspondences from depth + relative pose or from a homography."""

import logging
from dataclasses import dataclass, field

import numpy as np

from deformfeat.constants import MAX_CORRESPONDENCES, MIN_CORRESPONDENCES
from deformfeat.errors import InsufficientCorrespondencesError
from deformfeat.evaluation.homography import warp_homography

logger = logging.getLogger(__name__)

ORTHONORMAL_TOLERANCE = 1e-6


@dataclass
class CameraPair:
    """Intrinsics of both views, pose of view B relative to A, and depth of view A.

    Sizes are (width, height); target_size defaults to the depth map size.
    """

    K_a: np.ndarray
    K_b: np.ndarray
    R: np.ndarray
    t: np.ndarray
    depth: np.ndarray
    target_size: tuple[int, int] | None = None

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.ndim == 3:
            self.depth = self.depth[..., 0]
        if not np.allclose(self.R.T @ self.R, np.eye(3), atol=ORTHONORMAL_TOLERANCE):
            raise ValueError("Rotation is not orthonormal")
        if np.linalg.det(self.R) < 0:
            raise ValueError("Rotation must have determinant +1")
        for K in (self.K_a, self.K_b):
            if K[0, 0] <= 0 or K[1, 1] <= 0:
                raise ValueError("Focal lengths must be positive")
        if self.target_size is None:
            self.target_size = (self.depth.shape[1], self.depth.shape[0])

    @property
    def source_size(self) -> tuple[int, int]:
        return self.depth.shape[1], self.depth.shape[0]


@dataclass
class CorrespondenceSet:
    """Point pairs (p, p') with a validity flag per pair."""

    points_a: np.ndarray
    points_b: np.ndarray
    valid: np.ndarray
    source: str = "homography"
    capped: bool = field(default=False)

    def __len__(self) -> int:
        return int(self.valid.sum())

    def valid_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points_a[self.valid], self.points_b[self.valid]

    def for_loss(
        self,
        rng: np.random.Generator | None = None,
        minimum: int = MIN_CORRESPONDENCES,
        maximum: int = MAX_CORRESPONDENCES,
    ) -> "CorrespondenceSet":
        """Valid pairs only, at least minimum of them and at most maximum (random subset).

        Raises:
            InsufficientCorrespondencesError: Fewer than minimum valid pairs
        """
        a, b = self.valid_pairs()
        if len(a) < minimum:
            raise InsufficientCorrespondencesError(f"{len(a)} valid correspondences, need at least {minimum}")
        capped = len(a) > maximum
        if capped:
            rng = rng or np.random.default_rng(0)
            keep = np.sort(rng.choice(len(a), maximum, replace=False))
            a, b = a[keep], b[keep]
        return CorrespondenceSet(a, b, np.ones(len(a), dtype=bool), self.source, capped)


def _inside(points: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    width, height = size
    with np.errstate(invalid="ignore"):
        return (points[:, 0] >= 0) & (points[:, 0] <= width - 1) & (points[:, 1] >= 0) & (points[:, 1] <= height - 1)


def depth_at(depth: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Nearest-pixel depth; points outside the map read 0 (invalid)."""
    height, width = depth.shape
    cols = np.round(points[:, 0]).astype(np.intp)
    rows = np.round(points[:, 1]).astype(np.intp)
    inside = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    values = np.zeros(len(points))
    values[inside] = depth[rows[inside], cols[inside]]
    return values


def warp_points_depth(points: np.ndarray, cam: CameraPair) -> CorrespondenceSet:
    """p' = pi(K' (R d K^-1 p~ + t)).

    Pairs with zero/invalid depth, a point behind camera B or a target outside
    image B are flagged invalid.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    depth = depth_at(cam.depth, points)
    homogeneous = np.concatenate([points, np.ones((len(points), 1))], axis=1)
    rays = homogeneous @ np.linalg.inv(cam.K_a).T
    moved = (depth[:, None] * rays) @ cam.R.T + cam.t
    projected = moved @ np.asarray(cam.K_b, dtype=np.float64).T

    in_front = moved[:, 2] > 0
    valid = (depth > 0) & np.isfinite(depth) & in_front
    targets = np.full(points.shape, np.nan)
    targets[valid] = projected[valid, :2] / projected[valid, 2:3]
    valid &= _inside(targets, cam.target_size)
    return CorrespondenceSet(points, targets, valid, source="depth-warp")


def warp_points_homography(
    points: np.ndarray, H: np.ndarray, target_size: tuple[int, int] | None = None
) -> CorrespondenceSet:
    """Correspondences under a homography; unmappable or out-of-bounds targets are invalid."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    targets, valid = warp_homography(points, H)
    if target_size is not None:
        valid &= _inside(targets, target_size)
    return CorrespondenceSet(points, targets, valid, source="homography")
