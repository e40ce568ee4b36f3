"""Keypoint selection on a fused score map: NMS, edge test, sub-pixel fit, top-K."""

import logging

import numpy as np
from scipy import ndimage

from deformfeat.detection.base import DetectorConfig, Keypoint, ScoreMap

logger = logging.getLogger(__name__)

SINGULAR_DETERMINANT = 1e-12
MAX_SUBPIXEL_OFFSET = 0.5

# source level recorded on keypoints for each fusion mode
FUSION_LEVEL_HINTS = {
    "multilevel": "fused",
    "single": "conv8",
    "pyramid": "conv8",
    "in-network": "conv8-multiscale",
}


def _plane(s: ScoreMap | np.ndarray) -> np.ndarray:
    values = s.values if isinstance(s, ScoreMap) else np.asarray(s)
    return values[..., 0] if values.ndim == 3 else values


def nms(s: ScoreMap | np.ndarray, size: int = 3) -> np.ndarray:
    """Boolean mask of strict local maxima in a size x size window.

    Among equal maxima the one first in (y, x) order survives. Windows where
    every value is equal keep nothing, so flat regions yield no maxima.
    """
    if size < 3 or size % 2 == 0:
        raise ValueError(f"NMS size must be odd and >= 3, got {size}")
    values = _plane(s).astype(np.float64)
    peak = ndimage.maximum_filter(values, size=size, mode="constant", cval=-np.inf)
    trough = ndimage.minimum_filter(values, size=size, mode="constant", cval=np.inf)
    keep = (values == peak) & (peak > trough)

    radius = size // 2
    padded = np.pad(values, radius, mode="constant", constant_values=-np.inf)
    height, width = values.shape
    for dy in range(-radius, 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx >= 0:
                break
            earlier = padded[radius + dy : radius + dy + height, radius + dx : radius + dx + width]
            keep &= earlier != values
    return keep


def _local_derivatives(values: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> tuple[np.ndarray, ...]:
    """Central-difference gradient and Hessian at integer positions with full 3x3 support."""
    centre = values[ys, xs]
    left, right = values[ys, xs - 1], values[ys, xs + 1]
    up, down = values[ys - 1, xs], values[ys + 1, xs]
    dx = 0.5 * (right - left)
    dy = 0.5 * (down - up)
    dxx = right + left - 2.0 * centre
    dyy = down + up - 2.0 * centre
    dxy = 0.25 * (values[ys + 1, xs + 1] - values[ys + 1, xs - 1] - values[ys - 1, xs + 1] + values[ys - 1, xs - 1])
    return centre, dx, dy, dxx, dyy, dxy


def edge_response_mask(values: np.ndarray, ys: np.ndarray, xs: np.ndarray, r: float = 10.0) -> np.ndarray:
    """Keep positions whose Hessian has det > 0 and tr^2 / det < (r + 1)^2 / r."""
    _, _, _, dxx, dyy, dxy = _local_derivatives(values, ys, xs)
    trace = dxx + dyy
    det = dxx * dyy - dxy * dxy
    limit = (r + 1.0) ** 2 / r
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(det > 0, trace * trace / np.where(det > 0, det, 1.0), np.inf)
    return (det > 0) & (ratio < limit)


def edge_eliminate(s: ScoreMap | np.ndarray, x: int, y: int, r: float = 10.0) -> bool:
    """True if the keypoint at integer (x, y) survives the edge test."""
    values = _plane(s)
    return bool(edge_response_mask(values, np.array([y]), np.array([x]), r)[0])


def subpixel_offsets(values: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quadratic-fit offsets (ox, oy) clamped to [-0.5, 0.5] and the fitted scores.

    A singular Hessian gives a zero offset and the original score.
    """
    centre, dx, dy, dxx, dyy, dxy = _local_derivatives(values, ys, xs)
    det = dxx * dyy - dxy * dxy
    singular = np.abs(det) < SINGULAR_DETERMINANT
    safe = np.where(singular, 1.0, det)
    # -H^-1 g with H = [[dxx, dxy], [dxy, dyy]]
    ox = np.where(singular, 0.0, -(dyy * dx - dxy * dy) / safe)
    oy = np.where(singular, 0.0, -(dxx * dy - dxy * dx) / safe)
    ox = np.clip(ox, -MAX_SUBPIXEL_OFFSET, MAX_SUBPIXEL_OFFSET)
    oy = np.clip(oy, -MAX_SUBPIXEL_OFFSET, MAX_SUBPIXEL_OFFSET)
    fitted = centre + dx * ox + dy * oy + 0.5 * (dxx * ox * ox + 2.0 * dxy * ox * oy + dyy * oy * oy)
    return ox, oy, fitted


def subpixel_refine(s: ScoreMap | np.ndarray, kp: Keypoint) -> Keypoint:
    """Refine an integer keypoint to the extremum of its 3x3 quadratic fit."""
    values = _plane(s)
    x, y = int(round(kp.x)), int(round(kp.y))
    ox, oy, fitted = subpixel_offsets(values, np.array([y]), np.array([x]))
    return Keypoint(
        x=x + float(ox[0]),
        y=y + float(oy[0]),
        score=float(fitted[0]),
        level_hint=kp.level_hint,
        pyramid_scale=kp.pyramid_scale,
    )


def select_keypoints(
    s: ScoreMap, cfg: DetectorConfig, pyramid_scale: float = 1.0, level_hint: str | None = None
) -> list[Keypoint]:
    """NMS, edge elimination, sub-pixel refinement, thresholding and top-K.

    Keypoints carry level_hint, or the source level of cfg.fusion when omitted.

    Keypoints within cfg.border pixels of the image border are discarded.
    Output is sorted by score descending, ties by (y, x).
    """
    values = _plane(s).astype(np.float64)
    height, width = values.shape
    margin = max(cfg.border, 1)
    mask = nms(values, cfg.nms_size)
    mask[:margin] = False
    mask[height - margin :] = False
    mask[:, :margin] = False
    mask[:, width - margin :] = False
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return []

    survivors = edge_response_mask(values, ys, xs, cfg.edge_threshold)
    ys, xs = ys[survivors], xs[survivors]
    ox, oy, fitted = subpixel_offsets(values, ys, xs)
    passed = fitted >= cfg.score_min
    ys, xs, ox, oy, fitted = ys[passed], xs[passed], ox[passed], oy[passed], fitted[passed]

    hint = level_hint or FUSION_LEVEL_HINTS[cfg.fusion]
    order = np.lexsort((xs, ys, -fitted))[: cfg.top_k]
    logger.debug(
        f"Selected {order.size} keypoints from {int(mask.sum())} maxima ({int(survivors.sum())} after edge test)"
    )
    return [
        Keypoint(
            x=float(xs[i] + ox[i]),
            y=float(ys[i] + oy[i]),
            score=float(fitted[i]),
            level_hint=hint,
            pyramid_scale=pyramid_scale,
        )
        for i in order
    ]
