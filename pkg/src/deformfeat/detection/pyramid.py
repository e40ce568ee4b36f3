"""Image-pyramid detection: score every scale, map back, merge with greedy NMS."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from deformfeat.constants import PYRAMID_BLUR_SIGMA, PYRAMID_MAX_SIDE, PYRAMID_MIN_SIDE, PYRAMID_SCALE_STEP
from deformfeat.detection.base import DetectorConfig, Keypoint
from deformfeat.detection.keypoints import select_keypoints
from deformfeat.detection.scores import score_hierarchy
from deformfeat.network.backbone import FeatureHierarchy
from deformfeat.numerics.sampling import gaussian_blur, resize_bilinear
from deformfeat.numerics.tensor import Tensor

logger = logging.getLogger(__name__)

Extractor = Callable[[Tensor], FeatureHierarchy]


@dataclass
class PyramidLevel:
    """One pyramid image; scale is its nominal size relative to the original input.

    Resizes use half-pixel centres, so the per-axis ratios of the level and
    source sizes map coordinates exactly through any chain of levels.
    """

    tensor: Tensor
    scale: float
    source_size: tuple[int, int] = (0, 0)  # (width, height) of the original input

    def _ratios(self) -> tuple[float, float]:
        width, height = self.source_size
        return width / self.tensor.shape[1], height / self.tensor.shape[0]

    def to_image(self, xs: np.ndarray | float, ys: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
        """Original-image coordinates of level coordinates."""
        rx, ry = self._ratios()
        return (np.asarray(xs) + 0.5) * rx - 0.5, (np.asarray(ys) + 0.5) * ry - 0.5

    def to_level(self, xs: np.ndarray | float, ys: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
        """Inverse of to_image."""
        rx, ry = self._ratios()
        return (np.asarray(xs) + 0.5) / rx - 0.5, (np.asarray(ys) + 0.5) / ry - 0.5


def build_pyramid(
    image: Tensor,
    min_side: int = PYRAMID_MIN_SIDE,
    max_side: int = PYRAMID_MAX_SIDE,
    step: float = PYRAMID_SCALE_STEP,
    sigma: float = PYRAMID_BLUR_SIGMA,
) -> list[PyramidLevel]:
    """Blur-and-downsample pyramid.

    The first level is the input with its longest side capped at max_side and
    is always kept. Each further level is the previous one blurred and
    shrunk by step, and is kept while its longest side is at least min_side.
    """
    height, width = image.shape[:2]
    source = (width, height)
    base_scale = min(1.0, max_side / max(height, width))
    if base_scale < 1.0:
        image = resize_bilinear(image, max(1, round(height * base_scale)), max(1, round(width * base_scale)))
    levels = [PyramidLevel(image, base_scale, source)]

    current = image
    k = 1
    while True:
        scale = base_scale / step**k
        size_h, size_w = round(height * scale), round(width * scale)
        if max(size_h, size_w) < min_side or min(size_h, size_w) < 1:
            break
        current = resize_bilinear(gaussian_blur(current, sigma), size_h, size_w)
        levels.append(PyramidLevel(current, scale, source))
        k += 1
    return levels


def pyramid_level_count(height: int, width: int) -> int:
    """Number of levels build_pyramid produces for an input size."""
    longest = min(max(height, width), PYRAMID_MAX_SIDE)
    if longest < PYRAMID_MIN_SIDE:
        return 1
    return 1 + int(math.floor(math.log(longest / PYRAMID_MIN_SIDE, PYRAMID_SCALE_STEP) + 1e-9))


def cross_scale_nms(keypoints: list[Keypoint], radius: float) -> list[Keypoint]:
    """Greedy suppression in original coordinates, strongest first.

    A keypoint is dropped when a stronger one lies within Chebyshev distance
    radius.
    """
    if not keypoints:
        return []
    ordered = sorted(keypoints, key=lambda kp: (-kp.score, kp.y, kp.x))
    points = np.array([[kp.x, kp.y] for kp in ordered])
    tree = cKDTree(points)
    suppressed = np.zeros(len(ordered), dtype=bool)
    kept = []
    for i, kp in enumerate(ordered):
        if suppressed[i]:
            continue
        kept.append(kp)
        suppressed[tree.query_ball_point(points[i], radius, p=np.inf)] = True
    return kept


@dataclass
class PyramidDetection:
    """Merged keypoints plus the per-level hierarchies used to describe them."""

    keypoints: list[Keypoint]
    levels: list[PyramidLevel]
    hierarchies: list[FeatureHierarchy]

    def level_index(self, kp: Keypoint) -> int:
        for i, level in enumerate(self.levels):
            if level.scale == kp.pyramid_scale:
                return i
        raise KeyError(f"No pyramid level at scale {kp.pyramid_scale}")


def pyramid_detect(image: Tensor, extractor: Extractor, cfg: DetectorConfig, threads: int = 1) -> PyramidDetection:
    """Detect on every pyramid level and merge in original coordinates.

    Levels may run concurrently; results are merged in level order.
    """
    levels = build_pyramid(image)

    def detect(index: int) -> tuple[FeatureHierarchy, list[Keypoint]]:
        level = levels[index]
        hierarchy = extractor(level.tensor)
        height, width = level.tensor.shape[:2]
        score = score_hierarchy(hierarchy, cfg, height, width)
        found = select_keypoints(score, cfg, pyramid_scale=level.scale, level_hint=f"pyramid{index}")
        xs, ys = level.to_image(np.array([kp.x for kp in found]), np.array([kp.y for kp in found]))
        return hierarchy, [
            Keypoint(
                x=float(x),
                y=float(y),
                score=kp.score,
                level_hint=kp.level_hint,
                pyramid_scale=level.scale,
            )
            for kp, x, y in zip(found, xs, ys)
        ]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(detect, range(len(levels))))
    else:
        results = [detect(i) for i in range(len(levels))]

    merged = [kp for _, found in results for kp in found]
    keypoints = cross_scale_nms(merged, float(cfg.nms_radius))[: cfg.top_k]
    logger.debug(f"Pyramid of {len(levels)} levels: {len(merged)} candidates, {len(keypoints)} kept")
    return PyramidDetection(keypoints=keypoints, levels=levels, hierarchies=[h for h, _ in results])
