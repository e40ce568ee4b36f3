"""Fundamental-matrix estimation and epipolar metrics.

Distances are computed in diagonal-normalized coordinates: pixel coordinates
of each image divided by that image's diagonal length, so F_n = D_b F D_a with
D = diag(diag_len, diag_len, 1).
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from deformfeat.constants import (
    RANSAC_ITERATIONS,
    RANSAC_SED_THRESHOLD,
    RECALL_THRESHOLD,
    VIRTUAL_CORRESPONDENCES,
)
from deformfeat.losses.correspondences import CameraPair, warp_points_depth

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-6
MIN_MATCHES = 8
LOCAL_OPTIMIZATION_ROUNDS = 10
VALID_MINIMAL_SOLVERS = ("seven", "eight")

Size = tuple[int, int]


def diagonal(size: Size) -> float:
    width, height = size
    return math.hypot(width, height)


def _scaling(size: Size) -> np.ndarray:
    d = diagonal(size)
    return np.diag([d, d, 1.0])


def normalize_fundamental(F: np.ndarray, size_a: Size, size_b: Size) -> np.ndarray:
    """Express F in diagonal-normalized coordinates."""
    return _scaling(size_b) @ F @ _scaling(size_a)


def denormalize_fundamental(F_n: np.ndarray, size_a: Size, size_b: Size) -> np.ndarray:
    return np.linalg.inv(_scaling(size_b)) @ F_n @ np.linalg.inv(_scaling(size_a))


def unit_fundamental(F: np.ndarray) -> np.ndarray:
    """Scale to unit Frobenius norm with the largest-magnitude entry positive."""
    F = F / np.linalg.norm(F)
    flat = F.ravel()
    return F * np.sign(flat[np.argmax(np.abs(flat))])


def enforce_rank2(F: np.ndarray) -> np.ndarray:
    U, S, Vt = np.linalg.svd(F)
    S[2] = 0.0
    return U @ np.diag(S) @ Vt


@dataclass
class FundamentalGT:
    """Ground-truth fundamental matrix (x_b^T F x_a = 0) and image sizes (width, height)."""

    matrix: np.ndarray
    size_a: Size
    size_b: Size

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.shape != (3, 3):
            raise ValueError(f"Fundamental matrix must be 3x3, got {matrix.shape}")
        singular = np.linalg.svd(matrix, compute_uv=False)
        if singular[0] == 0 or singular[2] / singular[0] >= RANK_TOLERANCE:
            raise ValueError("Fundamental matrix is not rank 2")
        self.matrix = matrix


def _homogeneous(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return np.concatenate([points, np.ones((len(points), 1))], axis=1)


def sed_normalized(xa: np.ndarray, xb: np.ndarray, F_n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric epipolar distance for coordinates already in F_n's frame.

    Returns:
        (distances, degenerate) where degenerate marks pairs whose epipolar
        lines both vanish; those distances are inf
    """
    ha, hb = _homogeneous(xa), _homogeneous(xb)
    line_b = ha @ F_n.T
    line_a = hb @ F_n
    residual = np.sum(hb * line_b, axis=1)
    norm_b = line_b[:, 0] ** 2 + line_b[:, 1] ** 2
    norm_a = line_a[:, 0] ** 2 + line_a[:, 1] ** 2
    degenerate = (norm_a == 0) & (norm_b == 0)
    squared = residual**2
    with np.errstate(divide="ignore", invalid="ignore"):
        term_b = np.where(norm_b > 0, squared / np.where(norm_b > 0, norm_b, 1.0), np.where(squared > 0, np.inf, 0.0))
        term_a = np.where(norm_a > 0, squared / np.where(norm_a > 0, norm_a, 1.0), np.where(squared > 0, np.inf, 0.0))
    distances = term_a + term_b
    distances[degenerate] = np.inf
    return distances, degenerate


def symmetric_epipolar_distance(
    xa: np.ndarray, xb: np.ndarray, F: np.ndarray, size_a: Size, size_b: Size
) -> tuple[np.ndarray, np.ndarray]:
    """(x'^T F x)^2 (1 / |(F x)_12|^2 + 1 / |(F^T x')_12|^2) in normalized units."""
    xa = np.asarray(xa, dtype=np.float64).reshape(-1, 2) / diagonal(size_a)
    xb = np.asarray(xb, dtype=np.float64).reshape(-1, 2) / diagonal(size_b)
    return sed_normalized(xa, xb, normalize_fundamental(np.asarray(F, dtype=np.float64), size_a, size_b))


# === Solvers ===


def _hartley(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate to the centroid and scale to mean distance sqrt(2)."""
    centroid = points.mean(axis=0)
    spread = np.mean(np.linalg.norm(points - centroid, axis=1))
    scale = math.sqrt(2.0) / spread if spread > 0 else 1.0
    T = np.array([[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]])
    return _homogeneous(points) @ T.T, T


def _epipolar_rows(ha: np.ndarray, hb: np.ndarray) -> np.ndarray:
    return np.einsum("ni,nj->nij", hb, ha).reshape(-1, 9)


def eight_point(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Normalized 8-point solve with rank-2 truncation; needs >= 8 pairs."""
    ha, Ta = _hartley(xa)
    hb, Tb = _hartley(xb)
    _, _, Vt = np.linalg.svd(_epipolar_rows(ha, hb))
    F = enforce_rank2(Vt[-1].reshape(3, 3))
    return unit_fundamental(Tb.T @ F @ Ta)


def seven_point(xa: np.ndarray, xb: np.ndarray) -> list[np.ndarray]:
    """Up to three rank-2 solutions through exactly seven pairs."""
    ha, Ta = _hartley(xa)
    hb, Tb = _hartley(xb)
    _, _, Vt = np.linalg.svd(_epipolar_rows(ha, hb), full_matrices=True)
    F1, F2 = Vt[-1].reshape(3, 3), Vt[-2].reshape(3, 3)

    # det(a F1 + (1 - a) F2) is cubic in a; four samples fix it exactly
    samples = np.array([0.0, 1.0, -1.0, 2.0])
    values = [np.linalg.det(a * F1 + (1 - a) * F2) for a in samples]
    coefficients = np.polyfit(samples, values, 3)
    solutions = []
    for root in np.roots(coefficients):
        if abs(root.imag) > 1e-9:
            continue
        F = root.real * F1 + (1 - root.real) * F2
        if np.linalg.norm(F) == 0:
            continue
        solutions.append(unit_fundamental(Tb.T @ F @ Ta))
    return solutions


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = RANSAC_ITERATIONS
    threshold: float = RANSAC_SED_THRESHOLD
    seed: int = 0
    minimal_solver: str = "eight"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"RANSAC iterations must be >= 1, got {self.iterations}")
        if self.threshold <= 0:
            raise ValueError(f"RANSAC threshold must be positive, got {self.threshold}")
        if self.minimal_solver not in VALID_MINIMAL_SOLVERS:
            raise ValueError(f"Unknown minimal solver: {self.minimal_solver}")

    @property
    def sample_size(self) -> int:
        return 7 if self.minimal_solver == "seven" else 8


@dataclass
class RansacResult:
    """Estimated F in pixel coordinates (None on failure) and the inlier mask."""

    F: np.ndarray | None
    inliers: np.ndarray
    success: bool = True
    message: str = ""
    iterations: int = 0

    @property
    def inlier_count(self) -> int:
        return int(self.inliers.sum())


def _count(xa: np.ndarray, xb: np.ndarray, F_n: np.ndarray, threshold: float) -> np.ndarray:
    distances, _ = sed_normalized(xa, xb, F_n)
    return distances < threshold


def estimate_fundamental_ransac(
    xa: np.ndarray, xb: np.ndarray, size_a: Size, size_b: Size, cfg: RansacConfig | None = None
) -> RansacResult:
    """Robust F from putative matches.

    Hypotheses come from random 8-point samples solved with the normalized
    8-point method (7-point samples when minimal_solver is "seven"). The
    model with most inliers (SED < threshold) is refit on all its inliers
    and refined while the inlier set grows.
    """
    cfg = cfg or RansacConfig()
    xa = np.asarray(xa, dtype=np.float64).reshape(-1, 2)
    xb = np.asarray(xb, dtype=np.float64).reshape(-1, 2)
    count = len(xa)
    if count < MIN_MATCHES:
        return RansacResult(None, np.zeros(count, dtype=bool), False, f"{count} matches, need {MIN_MATCHES}")

    na, nb = xa / diagonal(size_a), xb / diagonal(size_b)
    rng = np.random.default_rng(cfg.seed)
    sample_size = cfg.sample_size

    best_F, best_inliers = None, np.zeros(count, dtype=bool)
    for _ in range(cfg.iterations):
        sample = rng.choice(count, sample_size, replace=False)
        try:
            models = seven_point(na[sample], nb[sample]) if sample_size == 7 else [eight_point(na[sample], nb[sample])]
        except np.linalg.LinAlgError:
            continue
        for F_n in models:
            inliers = _count(na, nb, F_n, cfg.threshold)
            if inliers.sum() > best_inliers.sum():
                best_F, best_inliers = F_n, inliers

    if best_F is None or best_inliers.sum() < MIN_MATCHES:
        return RansacResult(None, best_inliers, False, "no model with enough inliers", cfg.iterations)

    for _ in range(LOCAL_OPTIMIZATION_ROUNDS):
        refit = eight_point(na[best_inliers], nb[best_inliers])
        inliers = _count(na, nb, refit, cfg.threshold)
        if inliers.sum() < best_inliers.sum() or inliers.sum() < MIN_MATCHES:
            break
        grown = inliers.sum() > best_inliers.sum()
        best_F, best_inliers = refit, inliers
        if not grown:
            break

    F = unit_fundamental(denormalize_fundamental(best_F, size_a, size_b))
    logger.debug(f"RANSAC kept {int(best_inliers.sum())}/{count} inliers")
    return RansacResult(F, best_inliers, True, "", cfg.iterations)


# === Ground truth and recall ===


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def fundamental_from_pose(cam: CameraPair) -> np.ndarray:
    """F = K_b^-T [t]_x R K_a^-1, scaled to unit norm."""
    F = np.linalg.inv(cam.K_b).T @ skew(cam.t) @ cam.R @ np.linalg.inv(cam.K_a)
    return unit_fundamental(F)


def _line_segment(line: np.ndarray, size: Size) -> tuple[np.ndarray, np.ndarray] | None:
    """End points of the part of line a x + b y + c = 0 inside the image, if any."""
    a, b, c = line
    width, height = size
    candidates = []
    if abs(b) > 1e-15:
        for x in (0.0, width - 1.0):
            candidates.append((x, -(a * x + c) / b))
    if abs(a) > 1e-15:
        for y in (0.0, height - 1.0):
            candidates.append((-(b * y + c) / a, y))
    inside = [p for p in candidates if -1e-9 <= p[0] <= width - 1 + 1e-9 and -1e-9 <= p[1] <= height - 1 + 1e-9]
    if len(inside) < 2:
        return None
    inside.sort()
    return np.array(inside[0]), np.array(inside[-1])


def _closest_on_line(line: np.ndarray, point: np.ndarray) -> np.ndarray:
    a, b, c = line
    offset = (a * point[0] + b * point[1] + c) / (a * a + b * b)
    return point - offset * np.array([a, b])


@dataclass
class VirtualCorrespondences:
    points_a: np.ndarray
    points_b: np.ndarray
    size_a: Size
    size_b: Size


def virtual_correspondences(
    gt: FundamentalGT | CameraPair,
    count: int = VIRTUAL_CORRESPONDENCES,
    rng: np.random.Generator | None = None,
) -> VirtualCorrespondences:
    """Correspondences that satisfy the ground-truth geometry exactly.

    With a camera pair, uniformly drawn points of image A with valid depth are
    transferred by depth warping. With only F, each drawn point is paired with
    a uniform point on its epipolar line inside image B (or the line point
    nearest the image centre when the line misses the image).
    """
    rng = rng or np.random.default_rng(0)
    if isinstance(gt, CameraPair):
        width, height = gt.source_size
        collected_a, collected_b = [], []
        for _ in range(20):
            points = rng.uniform([0, 0], [width - 1, height - 1], size=(count, 2))
            pairs = warp_points_depth(points, gt)
            a, b = pairs.valid_pairs()
            collected_a.append(a)
            collected_b.append(b)
            if sum(len(p) for p in collected_a) >= count:
                break
        points_a = np.concatenate(collected_a)[:count]
        points_b = np.concatenate(collected_b)[:count]
        return VirtualCorrespondences(points_a, points_b, gt.source_size, gt.target_size)

    width_a, height_a = gt.size_a
    points_a = rng.uniform([0, 0], [width_a - 1, height_a - 1], size=(count, 2))
    centre_b = np.array([(gt.size_b[0] - 1) / 2.0, (gt.size_b[1] - 1) / 2.0])
    lines = _homogeneous(points_a) @ gt.matrix.T
    fractions = rng.uniform(size=count)
    points_b = np.empty_like(points_a)
    for i, line in enumerate(lines):
        segment = _line_segment(line, gt.size_b)
        if segment is None:
            points_b[i] = _closest_on_line(line, centre_b)
        else:
            start, end = segment
            points_b[i] = start + fractions[i] * (end - start)
    return VirtualCorrespondences(points_a, points_b, gt.size_a, gt.size_b)


def mean_virtual_error(F: np.ndarray, virtual: VirtualCorrespondences) -> float:
    """Mean normalized SED of virtual correspondences under an estimated F."""
    distances, _ = symmetric_epipolar_distance(virtual.points_a, virtual.points_b, F, virtual.size_a, virtual.size_b)
    return float(np.mean(distances)) if len(distances) else math.inf


@dataclass
class RecallSummary:
    recall: float
    recalled: int
    total: int
    errors: list[float] = field(default_factory=list)


def pose_recall(
    estimates: list[np.ndarray | None],
    virtuals: list[VirtualCorrespondences],
    threshold: float = RECALL_THRESHOLD,
) -> RecallSummary:
    """Fraction (%) of pairs whose mean virtual SED is below threshold; failures count as misses."""
    if len(estimates) != len(virtuals):
        raise ValueError("Need one virtual correspondence set per estimate")
    errors = [math.inf if F is None else mean_virtual_error(F, v) for F, v in zip(estimates, virtuals)]
    recalled = sum(1 for e in errors if e < threshold)
    total = len(errors)
    return RecallSummary(100.0 * recalled / total if total else 0.0, recalled, total, errors)
