"""Descriptor and detection losses with closed-form gradients.

Descriptors arrive as matched rows: desc_a[i] corresponds to desc_b[i].
Negatives of a pair are the other rows of the opposite image, except those
whose feature cell lies within the safe radius (Chebyshev) of the
correspondent's cell.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp, softmax

from deformfeat.constants import (
    CIRCLE_GAMMA,
    CIRCLE_MARGIN,
    MARGIN_NEGATIVE,
    MARGIN_POSITIVE,
    SAFE_RADIUS,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossParams:
    margin_positive: float = MARGIN_POSITIVE
    margin_negative: float = MARGIN_NEGATIVE
    safe_radius: int = SAFE_RADIUS
    circle_margin: float = CIRCLE_MARGIN
    circle_gamma: float = CIRCLE_GAMMA

    def __post_init__(self):
        if not 0 < self.margin_positive < self.margin_negative:
            raise ValueError("Margins must satisfy 0 < positive < negative")
        if self.safe_radius < 0:
            raise ValueError(f"Safe radius must be >= 0, got {self.safe_radius}")


@dataclass
class LossResult:
    """Mean loss, per-pair terms, skipped negative terms and optional gradients."""

    loss: float
    per_pair: np.ndarray
    skipped: np.ndarray
    grad_a: np.ndarray | None = None
    grad_b: np.ndarray | None = None

    @property
    def skipped_count(self) -> int:
        return int(self.skipped.sum())


def negative_masks(
    count: int, cells_a: np.ndarray | None, cells_b: np.ndarray | None, safe_radius: int
) -> tuple[np.ndarray, np.ndarray]:
    """Eligible negatives for both directions, each (N, N).

    eligible_b[i, j]: b_j may be a negative of anchor a_i (cell of b_j is
    outside the safe radius around b_i). eligible_a[i, j]: a_j for anchor b_i.
    """
    base = ~np.eye(count, dtype=bool)

    def outside(cells: np.ndarray | None) -> np.ndarray:
        if cells is None:
            return base
        cells = np.asarray(cells, dtype=np.float64).reshape(count, 2)
        chebyshev = np.max(np.abs(cells[:, None, :] - cells[None, :, :]), axis=-1)
        return base & (chebyshev > safe_radius)

    return outside(cells_a), outside(cells_b)


def _distance_table(desc_a: np.ndarray, desc_b: np.ndarray) -> np.ndarray:
    """Euclidean distances from the dot-product table: |a|^2 + |b|^2 - 2 a.b."""
    squared = np.sum(desc_a**2, 1)[:, None] + np.sum(desc_b**2, 1)[None, :] - 2.0 * desc_a @ desc_b.T
    return np.sqrt(np.maximum(squared, 0.0))


def hardest_contrastive(
    desc_a: np.ndarray,
    desc_b: np.ndarray,
    cells_a: np.ndarray | None = None,
    cells_b: np.ndarray | None = None,
    params: LossParams = LossParams(),
    with_grad: bool = False,
) -> LossResult:
    """Mean over pairs of [D(a_i, b_i) - m_p]_+ + [m_n - min(hardest a-side, hardest b-side)]_+.

    A pair without any eligible negative keeps only its positive term and is
    flagged as skipped.
    """
    desc_a = np.asarray(desc_a, dtype=np.float64)
    desc_b = np.asarray(desc_b, dtype=np.float64)
    count = len(desc_a)
    if count < 2 or desc_b.shape != desc_a.shape:
        raise ValueError(f"Need >= 2 matched descriptor rows of equal shape, got {desc_a.shape} and {desc_b.shape}")
    eligible_a, eligible_b = negative_masks(count, cells_a, cells_b, params.safe_radius)
    distances = _distance_table(desc_a, desc_b)
    rows = np.arange(count)

    positive = distances[rows, rows]
    # hardest b_j for anchor a_i, and hardest a_j for anchor b_i
    to_b = np.where(eligible_b, distances, np.inf)
    to_a = np.where(eligible_a, distances.T, np.inf)
    j_b, j_a = np.argmin(to_b, axis=1), np.argmin(to_a, axis=1)
    hard_b, hard_a = to_b[rows, j_b], to_a[rows, j_a]
    skipped = np.isinf(hard_b) & np.isinf(hard_a)
    use_b = hard_b <= hard_a
    hardest = np.where(use_b, hard_b, hard_a)

    positive_term = np.maximum(positive - params.margin_positive, 0.0)
    negative_term = np.where(skipped, 0.0, np.maximum(params.margin_negative - hardest, 0.0))
    per_pair = positive_term + negative_term
    if np.any(skipped):
        logger.warning(f"{int(skipped.sum())} anchors without eligible negatives")
    result = LossResult(float(per_pair.mean()), per_pair, skipped)
    if not with_grad:
        return result

    grad_a = np.zeros_like(desc_a)
    grad_b = np.zeros_like(desc_b)
    scale = 1.0 / count
    for i in range(count):
        if positive_term[i] > 0:
            direction = (desc_a[i] - desc_b[i]) / positive[i]
            grad_a[i] += scale * direction
            grad_b[i] -= scale * direction
        if negative_term[i] > 0:
            a_index, b_index = (i, j_b[i]) if use_b[i] else (j_a[i], i)
            distance = distances[a_index, b_index]
            direction = (desc_a[a_index] - desc_b[b_index]) / distance
            grad_a[a_index] -= scale * direction
            grad_b[b_index] += scale * direction
    result.grad_a, result.grad_b = grad_a, grad_b
    return result


def circle_loss(
    desc_a: np.ndarray,
    desc_b: np.ndarray,
    cells_a: np.ndarray | None = None,
    cells_b: np.ndarray | None = None,
    params: LossParams = LossParams(),
    with_grad: bool = False,
) -> LossResult:
    """Circle loss on cosine similarities, one positive per anchor pair.

    loss_i = softplus(logsumexp_n(g a_n (s_n - D_n)) - g a_p (s_p - D_p)) with
    a_p = [1 + m - s_p]_+, a_n = [s_n + m]_+, D_p = 1 - m, D_n = m. Negatives
    of pair i are s(a_i, b_j) and s(a_j, b_i) for eligible j.
    """
    desc_a = np.asarray(desc_a, dtype=np.float64)
    desc_b = np.asarray(desc_b, dtype=np.float64)
    count = len(desc_a)
    if count < 2 or desc_b.shape != desc_a.shape:
        raise ValueError(f"Need >= 2 matched descriptor rows of equal shape, got {desc_a.shape} and {desc_b.shape}")
    m, gamma = params.circle_margin, params.circle_gamma
    eligible_a, eligible_b = negative_masks(count, cells_a, cells_b, params.safe_radius)
    similarity = desc_a @ desc_b.T
    rows = np.arange(count)

    s_p = similarity[rows, rows]
    alpha_p = np.maximum(1.0 + m - s_p, 0.0)
    v = -gamma * alpha_p * (s_p - (1.0 - m))

    # per anchor: negatives along row i (b side) then column i (a side)
    negatives = np.concatenate([similarity, similarity.T], axis=1)
    eligible = np.concatenate([eligible_b, eligible_a], axis=1)
    alpha_n = np.maximum(negatives + m, 0.0)
    u = np.where(eligible, gamma * alpha_n * (negatives - m), -np.inf)
    skipped = ~np.any(eligible, axis=1)
    lse = np.where(skipped, -np.inf, logsumexp(np.where(skipped[:, None], 0.0, u), axis=1))
    z = lse + v
    per_pair = np.where(skipped, 0.0, np.logaddexp(0.0, z))
    if np.any(skipped):
        logger.warning(f"{int(skipped.sum())} anchors without eligible negatives")
    result = LossResult(float(per_pair.mean()), per_pair, skipped)
    if not with_grad:
        return result

    outer = np.where(skipped, 0.0, expit(z)) / count
    d_sp = outer * (-gamma * (-(1.0 + m - s_p > 0) * (s_p - (1.0 - m)) + alpha_p))
    masked = np.where(skipped[:, None], 0.0, u)
    weights = np.where(eligible, softmax(masked, axis=1), 0.0)
    d_sn = outer[:, None] * weights * gamma * ((negatives + m > 0) * (negatives - m) + alpha_n)

    # fold gradients w.r.t. the similarity table back into descriptors
    d_table = np.diag(d_sp) + d_sn[:, :count] + d_sn[:, count:].T
    result.grad_a = d_table @ desc_b
    result.grad_b = d_table.T @ desc_a
    return result


@dataclass
class DetectionLossResult:
    """Score-weighted loss, the normalized weights, and their gradients."""

    loss: float
    weights: np.ndarray
    degenerate: bool = False
    grad_scores_a: np.ndarray = field(default_factory=lambda: np.zeros(0))
    grad_scores_b: np.ndarray = field(default_factory=lambda: np.zeros(0))
    grad_terms: np.ndarray = field(default_factory=lambda: np.zeros(0))


def weighted_detection_loss(scores_a: np.ndarray, scores_b: np.ndarray, terms: np.ndarray) -> DetectionLossResult:
    """(1 / |C|) sum_c (s_c s'_c / sum_q s_q s'_q) M_c.

    Both the 1/|C| factor and the weight normalization are applied. All
    score products zero gives a zero loss flagged degenerate.
    """
    scores_a = np.asarray(scores_a, dtype=np.float64)
    scores_b = np.asarray(scores_b, dtype=np.float64)
    terms = np.asarray(terms, dtype=np.float64)
    count = len(terms)
    if count < 1 or scores_a.shape != (count,) or scores_b.shape != (count,):
        raise ValueError("Need one score per image and one loss term per correspondence")

    products = scores_a * scores_b
    total = products.sum()
    if total == 0:
        logger.warning("All detection score products are zero")
        zeros = np.zeros(count)
        return DetectionLossResult(0.0, zeros, True, zeros, zeros, zeros)

    weights = products / total
    loss = float(np.dot(weights, terms) / count)
    centred = (terms - np.dot(weights, terms)) / (total * count)
    return DetectionLossResult(
        loss=loss,
        weights=weights,
        grad_scores_a=scores_b * centred,
        grad_scores_b=scores_a * centred,
        grad_terms=weights / count,
    )
