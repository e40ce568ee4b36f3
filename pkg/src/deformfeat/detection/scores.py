"""Per-level keypoint scores and their fusion into one map at input resolution.

Two scorings are available: peakiness (softplus of the response minus its
channel mean and its spatial neighborhood mean) and the ratio scoring
(spatial softmax times response over the channel maximum).
"""

import numpy as np
from scipy.special import expit, logsumexp, softmax

from deformfeat.detection.base import DetectorConfig, ScoreMap
from deformfeat.network.backbone import FeatureHierarchy
from deformfeat.numerics.sampling import resize_bilinear, upsample_bilinear


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _window_offsets(dilation: int, size: int = 3) -> list[tuple[int, int]]:
    radius = size // 2
    return [
        (dy * dilation, dx * dilation) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
    ]


def neighborhood_stack(y: np.ndarray, dilation: int = 1) -> np.ndarray:
    """The 3x3 dilated neighborhood of every position, clamped at borders; (9, H, W, C)."""
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    height, width = y.shape[:2]
    d = dilation
    padded = np.pad(y, ((d, d), (d, d), (0, 0)), mode="edge")
    return np.stack([padded[d + dy : d + dy + height, d + dx : d + dx + width] for dy, dx in _window_offsets(d)])


def d2_local_score(y: np.ndarray, dilation: int = 1) -> np.ndarray:
    """alpha = exp(y) / sum over the 3x3 neighborhood of exp(y'), per channel."""
    return np.exp(y - logsumexp(neighborhood_stack(y, dilation), axis=0))


def d2_channel_score(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """beta^c = y^c / max_t y^t.

    Returns:
        (beta, degenerate) where positions with a non-positive channel
        maximum score 0 and are flagged
    """
    top = y.max(axis=-1, keepdims=True)
    degenerate = top[..., 0] <= 0
    safe = np.where(top > 0, top, 1.0)
    return np.where(top > 0, y / safe, 0.0), degenerate


def peakiness_scores(y: np.ndarray, dilation: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Spatial (alpha) and channel-wise (beta) peakiness of a feature map.

    beta^c = softplus(y^c - mean over channels), alpha^c = softplus(y^c - mean
    over the dilated 3x3 neighborhood).
    """
    beta = _softplus(y - y.mean(axis=-1, keepdims=True))
    alpha = _softplus(y - neighborhood_stack(y, dilation).mean(axis=0))
    return alpha, beta


def peakiness_vjp(y: np.ndarray, dilation: int, grad_alpha: np.ndarray, grad_beta: np.ndarray) -> np.ndarray:
    """Pull gradients of (alpha, beta) back to the feature map y."""
    height, width = y.shape[:2]
    weighted_beta = grad_beta * expit(y - y.mean(axis=-1, keepdims=True))
    grad = weighted_beta - weighted_beta.mean(axis=-1, keepdims=True)

    offsets = _window_offsets(dilation)
    weighted_alpha = grad_alpha * expit(y - neighborhood_stack(y, dilation).mean(axis=0))
    grad = grad + weighted_alpha
    share = weighted_alpha / len(offsets)
    for dy, dx in offsets:
        rows = np.clip(np.arange(height) + dy, 0, height - 1)
        cols = np.clip(np.arange(width) + dx, 0, width - 1)
        np.add.at(grad, (rows[:, None], cols[None, :]), -share)
    return grad


def combine_scores(alpha: np.ndarray, beta: np.ndarray, level_weights: tuple[float, ...] = ()) -> ScoreMap:
    """s = max over channels of alpha * beta."""
    if alpha.shape != beta.shape:
        raise ValueError(f"Score shapes differ: {alpha.shape} vs {beta.shape}")
    return ScoreMap(np.max(alpha * beta, axis=-1, keepdims=True), level_weights)


def peakiness_score_vjp(y: np.ndarray, dilation: int, upstream: np.ndarray) -> np.ndarray:
    """Gradient of sum(upstream * combine_scores(peakiness_scores(y))) w.r.t. y."""
    alpha, beta = peakiness_scores(y, dilation)
    winner = np.argmax(alpha * beta, axis=-1)[..., None]
    upstream = np.asarray(upstream).reshape(y.shape[:2] + (1,))
    grad_alpha = np.zeros_like(alpha)
    grad_beta = np.zeros_like(beta)
    np.put_along_axis(grad_alpha, winner, upstream * np.take_along_axis(beta, winner, -1), axis=-1)
    np.put_along_axis(grad_beta, winner, upstream * np.take_along_axis(alpha, winner, -1), axis=-1)
    return peakiness_vjp(y, dilation, grad_alpha, grad_beta)


def level_score(y: np.ndarray, scoring: str, dilation: int = 1) -> ScoreMap:
    """Score one feature map with the selected scoring."""
    if scoring == "peakiness":
        return combine_scores(*peakiness_scores(y, dilation))
    if scoring == "d2net-ratio":
        beta, _ = d2_channel_score(y)
        return combine_scores(d2_local_score(y, dilation), beta)
    raise ValueError(f"Unknown scoring: {scoring}")


def muldet_fuse(levels: list[ScoreMap], weights: tuple[float, ...]) -> ScoreMap:
    """Weighted mean of per-level score maps already at a common resolution."""
    if len(levels) != len(weights):
        raise ValueError(f"Got {len(levels)} score levels but {len(weights)} weights")
    shapes = {level.values.shape for level in levels}
    if len(shapes) != 1:
        raise ValueError(f"Score levels differ in shape: {sorted(shapes)}")
    total = sum(w * level.values for w, level in zip(weights, levels))
    return ScoreMap(total / float(sum(weights)), tuple(weights))


def to_input_resolution(score: ScoreMap, stride: int, height: int, width: int) -> ScoreMap:
    """Upsample a level's scores by its stride and crop to the input size."""
    values = upsample_bilinear(score.values, stride)[:height, :width]
    return ScoreMap(values, score.level_weights)


def _innetwork_scales(count: int, scale_range: float) -> np.ndarray:
    if count == 1:
        return np.array([1.0])
    return np.geomspace(1.0 / scale_range, scale_range, count)


def innetwork_multiscale(
    h: FeatureHierarchy,
    count: int = 5,
    scale_range: float = 2.0**0.5,
    scoring: str = "peakiness",
    dilation: int = 1,
) -> ScoreMap:
    """Score conv8 resized to log-spaced scales and merge with softmax weights.

    The merged map stays at conv8 resolution; each position weights the
    per-scale scores by a softmax over those same scores.
    """
    features = h.conv8
    height, width = features.shape[:2]
    per_scale = []
    for scale in _innetwork_scales(count, scale_range):
        size_h = max(1, int(round(height * scale)))
        size_w = max(1, int(round(width * scale)))
        scored = level_score(resize_bilinear(features, size_h, size_w), scoring, dilation)
        per_scale.append(resize_bilinear(scored.values, height, width))
    stacked = np.stack(per_scale)
    weights = softmax(stacked, axis=0)
    return ScoreMap(np.sum(weights * stacked, axis=0), (1.0,))


def score_hierarchy(h: FeatureHierarchy, cfg: DetectorConfig, height: int, width: int) -> ScoreMap:
    """Detection score map at input resolution for the configured fusion.

    "multilevel" fuses conv1, conv3 and conv8; "single" and "pyramid" score
    conv8 alone; "in-network" merges several conv8 scales first.
    """
    if cfg.fusion == "multilevel":
        levels = [
            to_input_resolution(level_score(level.tensor, cfg.scoring, dilation), level.stride, height, width)
            for level, dilation in zip(h.levels, cfg.level_dilations)
        ]
        return muldet_fuse(levels, cfg.level_weights)

    conv8 = h.level("conv8")
    dilation = cfg.level_dilations[-1]
    if cfg.fusion == "in-network":
        score = innetwork_multiscale(h, cfg.innetwork_scales, cfg.innetwork_range, cfg.scoring, dilation)
    else:
        score = level_score(conv8.tensor, cfg.scoring, dilation)
        score.level_weights = (1.0,)
    return to_input_resolution(score, conv8.stride, height, width)
