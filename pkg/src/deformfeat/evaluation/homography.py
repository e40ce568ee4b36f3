"""Homography ground-truth metrics: repeatability, matching score and MMA.

All metrics are percentages. A metric whose denominator is zero is None and
is left out of dataset means.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from deformfeat.constants import MMA_THRESHOLDS, REPEATABILITY_THRESHOLD
from deformfeat.errors import NumericError
from deformfeat.evaluation.matching import MatchSet

MIN_DENOMINATOR = 1e-12
MIN_DETERMINANT = 1e-12


@dataclass
class HomographyGT:
    """Ground-truth homography from image A to image B; sizes are (width, height)."""

    matrix: np.ndarray
    source_size: tuple[int, int]
    target_size: tuple[int, int]

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.shape != (3, 3):
            raise ValueError(f"Homography must be 3x3, got {matrix.shape}")
        if abs(matrix[2, 2]) > MIN_DENOMINATOR:
            matrix = matrix / matrix[2, 2]
        if abs(np.linalg.det(matrix)) <= MIN_DETERMINANT:
            raise NumericError("Ground-truth homography is not invertible")
        self.matrix = matrix

    def inverse(self) -> "HomographyGT":
        return HomographyGT(np.linalg.inv(self.matrix), self.target_size, self.source_size)


def warp_homography(points: np.ndarray, H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Projectively map (N, 2) points; a single (2,) point is accepted too.

    Returns:
        (warped points, valid mask) where points with |h3 . p| <= 1e-12 are
        unmappable and left as NaN
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    homogeneous = np.concatenate([pts, np.ones((len(pts), 1))], axis=1) @ np.asarray(H, dtype=np.float64).T
    denominator = homogeneous[:, 2]
    valid = np.abs(denominator) > MIN_DENOMINATOR
    warped = np.full(pts.shape, np.nan)
    warped[valid] = homogeneous[valid, :2] / denominator[valid, None]
    if single:
        return warped[0], valid[0]
    return warped, valid


def _inside(points: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    width, height = size
    with np.errstate(invalid="ignore"):
        return (points[:, 0] >= 0) & (points[:, 0] < width) & (points[:, 1] >= 0) & (points[:, 1] < height)


def shared_view(points_a: np.ndarray, points_b: np.ndarray, gt: HomographyGT) -> tuple[np.ndarray, np.ndarray]:
    """Masks of keypoints whose warp lands inside the other image."""
    warped_a, valid_a = warp_homography(points_a, gt.matrix)
    warped_b, valid_b = warp_homography(points_b, np.linalg.inv(gt.matrix))
    return valid_a & _inside(warped_a, gt.target_size), valid_b & _inside(warped_b, gt.source_size)


def _percent(numerator: int, denominator: int) -> float | None:
    if denominator == 0:
        return None
    return 100.0 * min(numerator, denominator) / denominator


def repeatability(
    points_a: np.ndarray, points_b: np.ndarray, gt: HomographyGT, threshold: float = REPEATABILITY_THRESHOLD
) -> float | None:
    """Possible matches over the smaller shared keypoint count, checked in both directions."""
    points_a = np.asarray(points_a, dtype=np.float64).reshape(-1, 2)
    points_b = np.asarray(points_b, dtype=np.float64).reshape(-1, 2)
    shared_a, shared_b = shared_view(points_a, points_b, gt)
    denominator = int(min(shared_a.sum(), shared_b.sum()))
    if denominator == 0:
        return None

    a, b = points_a[shared_a], points_b[shared_b]
    warped_a, _ = warp_homography(a, gt.matrix)
    warped_b, _ = warp_homography(b, np.linalg.inv(gt.matrix))
    possible_a = int(np.sum(cdist(warped_a, b).min(axis=1) <= threshold))
    possible_b = int(np.sum(cdist(warped_b, a).min(axis=1) <= threshold))
    return _percent(min(possible_a, possible_b), denominator)


def correct_matches(
    matches: MatchSet, points_a: np.ndarray, points_b: np.ndarray, gt: HomographyGT, threshold: float
) -> np.ndarray:
    """Boolean per match: warped distance strictly below threshold."""
    pairs = matches.index_pairs()
    if len(pairs) == 0:
        return np.zeros(0, dtype=bool)
    warped, valid = warp_homography(np.asarray(points_a)[pairs[:, 0]], gt.matrix)
    error = np.linalg.norm(warped - np.asarray(points_b)[pairs[:, 1]], axis=1)
    with np.errstate(invalid="ignore"):
        return valid & (error < threshold)


def matching_score(
    matches: MatchSet,
    points_a: np.ndarray,
    points_b: np.ndarray,
    gt: HomographyGT,
    threshold: float = REPEATABILITY_THRESHOLD,
) -> float | None:
    """Correct matches over the smaller shared keypoint count."""
    points_a = np.asarray(points_a, dtype=np.float64).reshape(-1, 2)
    points_b = np.asarray(points_b, dtype=np.float64).reshape(-1, 2)
    shared_a, shared_b = shared_view(points_a, points_b, gt)
    correct = int(correct_matches(matches, points_a, points_b, gt, threshold).sum())
    return _percent(correct, int(min(shared_a.sum(), shared_b.sum())))


def mma(
    matches: MatchSet,
    points_a: np.ndarray,
    points_b: np.ndarray,
    gt: HomographyGT,
    threshold: float = REPEATABILITY_THRESHOLD,
) -> float | None:
    """Correct matches over all mutual matches at one pixel threshold."""
    correct = correct_matches(matches, points_a, points_b, gt, threshold)
    return _percent(int(correct.sum()), len(correct))


def mma_curve(
    matches: MatchSet,
    points_a: np.ndarray,
    points_b: np.ndarray,
    gt: HomographyGT,
    thresholds: tuple[float, ...] = MMA_THRESHOLDS,
) -> dict[float, float | None]:
    """MMA at every threshold; non-decreasing because correct sets only grow."""
    return {t: mma(matches, points_a, points_b, gt, t) for t in thresholds}
