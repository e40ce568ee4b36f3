"""Local transform parameterizations and their sampling offsets.

A transform T acts on the k x k kernel grid R = {-(k-1)/2 .. (k-1)/2}^2 and the
deformable-convolution offsets are dp_n = T p_n - p_n. Offsets are stored
interleaved as (dx_0, dy_0, dx_1, dy_1, ...) with grid rows outermost.
"""

import math
from dataclasses import dataclass

import numpy as np

from deformfeat.errors import SingularProjectionError
from deformfeat.geometry.dlt import collinear_rows, corner_targets, dlt_solve, dlt_solve_batch

RESIDUAL_LIMIT = 1.0 - 1e-4
MIN_PROJECTIVE_DENOMINATOR = 1e-8

Mat2 = np.ndarray
Mat3 = np.ndarray


# === Activations ===


def activate_scale(x: float | np.ndarray) -> float | np.ndarray:
    """lambda(x) = exp(tanh(x)), bounded to [1/e, e]."""
    return np.exp(np.tanh(x))


def activate_angle(x: float, y: float) -> tuple[float, bool]:
    """theta(x, y) = arctan2(x, y).

    Returns:
        (theta, degenerate) where degenerate flags (x, y) == (0, 0), mapped to 0
    """
    if x == 0.0 and y == 0.0:
        return 0.0, True
    return float(math.atan2(x, y)), False


def activate_residuals(raw: np.ndarray) -> np.ndarray:
    """tanh-bounded affine residuals clipped inside (-1, 1)."""
    return np.clip(np.tanh(raw), -RESIDUAL_LIMIT, RESIDUAL_LIMIT)


# === Matrices ===


def rotation(theta: float | np.ndarray) -> np.ndarray:
    """R(theta) = [[cos, sin], [-sin, cos]] (batched over theta's shape)."""
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -2)


def similarity_matrix(scale: float | np.ndarray, theta: float | np.ndarray) -> Mat2:
    """S = lambda R(theta)."""
    return np.asarray(scale)[..., None, None] * rotation(theta)


def shape_matrix(a11: float | np.ndarray, a21: float | np.ndarray, a22: float | np.ndarray) -> Mat2:
    """Unit-determinant shape matrix A' built from residuals.

    A' = [[|1+a11|, 0], [a21, |1+a22|]] @ diag(1 / |(1+a11)(1+a22)|, 1)
    """
    a11, a21, a22 = (np.clip(np.asarray(a, dtype=np.float64), -RESIDUAL_LIMIT, RESIDUAL_LIMIT) for a in (a11, a21, a22))
    d11, d22 = np.abs(1.0 + a11), np.abs(1.0 + a22)
    norm = d11 * d22
    zeros = np.zeros_like(norm)
    return np.stack(
        [np.stack([d11 / norm, zeros], -1), np.stack([a21 / norm, d22], -1)],
        -2,
    )


def affine_matrix(
    scale: float | np.ndarray,
    theta: float | np.ndarray,
    a11: float | np.ndarray,
    a21: float | np.ndarray,
    a22: float | np.ndarray,
) -> Mat2:
    """A = lambda R(theta) A'."""
    return similarity_matrix(scale, theta) @ shape_matrix(a11, a21, a22)


# === Transform variants ===


@dataclass(frozen=True)
class FreeForm:
    """Per-tap offsets predicted directly (2 k^2 values)."""

    offsets: tuple[float, ...]


@dataclass(frozen=True)
class Similarity:
    scale: float = 1.0
    theta: float = 0.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"Similarity scale must be positive, got {self.scale}")

    def matrix(self) -> Mat2:
        return similarity_matrix(self.scale, self.theta)


@dataclass(frozen=True)
class Affine:
    scale: float = 1.0
    theta: float = 0.0
    a11: float = 0.0
    a21: float = 0.0
    a22: float = 0.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"Affine scale must be positive, got {self.scale}")

    def matrix(self) -> Mat2:
        return affine_matrix(self.scale, self.theta, self.a11, self.a21, self.a22)


@dataclass(frozen=True)
class Homography:
    """Four-corner parameterization; offsets lie in (-1, 1)."""

    corner_offsets: tuple[float, ...] = (0.0,) * 8

    def matrix(self) -> Mat3:
        return dlt_solve(np.asarray(self.corner_offsets, dtype=np.float64))


LocalTransform = FreeForm | Similarity | Affine | Homography


def kernel_grid(k: int) -> np.ndarray:
    """Grid points p_n as (k^2, 2) array of (u, v), rows outermost."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"Kernel size must be odd and positive, got {k}")
    half = (k - 1) // 2
    v, u = np.meshgrid(np.arange(-half, half + 1), np.arange(-half, half + 1), indexing="ij")
    return np.stack([u.ravel(), v.ravel()], axis=-1).astype(np.float64)


def offsets_from_linear(matrices: np.ndarray, k: int) -> np.ndarray:
    """Offsets (..., 2 k^2) for batches of 2x2 transforms (..., 2, 2)."""
    grid = kernel_grid(k)
    moved = np.einsum("...ij,nj->...ni", matrices, grid)
    delta = moved - grid
    return delta.reshape(delta.shape[:-2] + (2 * k * k,))


def _grid_projection(homographies: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid numerators (..., k^2, 2) and denominators (..., k^2) under homographies."""
    grid = kernel_grid(k)
    homogeneous = np.concatenate([grid, np.ones((grid.shape[0], 1))], axis=1)
    mapped = np.einsum("...ij,nj->...ni", homographies, homogeneous)
    return mapped[..., :2], mapped[..., 2]


def project_grid(homographies: np.ndarray, k: int) -> np.ndarray:
    """Projectively map the kernel grid: (..., 3, 3) -> (..., k^2, 2).

    Raises:
        SingularProjectionError: If a denominator vanishes at a grid point
    """
    numerator, denominator = _grid_projection(homographies, k)
    if np.any(np.abs(denominator) < MIN_PROJECTIVE_DENOMINATOR):
        raise SingularProjectionError("Homography maps a kernel grid point to infinity")
    return numerator / denominator[..., None]


def offsets_from_homographies(homographies: np.ndarray, k: int) -> np.ndarray:
    """Offsets (..., 2 k^2) for batches of 3x3 homographies."""
    delta = project_grid(homographies, k) - kernel_grid(k)
    return delta.reshape(delta.shape[:-2] + (2 * k * k,))


def offsets_from_transform(transform: LocalTransform, k: int = 3) -> np.ndarray:
    """Sampling offsets dp_n = T p_n - p_n for every kernel grid point."""
    if isinstance(transform, FreeForm):
        offsets = np.asarray(transform.offsets, dtype=np.float64)
        if offsets.shape != (2 * k * k,):
            raise ValueError(f"Free-form offsets need {2 * k * k} values, got {offsets.size}")
        return offsets
    if isinstance(transform, Homography):
        return offsets_from_homographies(transform.matrix(), k)
    if isinstance(transform, (Similarity, Affine)):
        return offsets_from_linear(transform.matrix(), k)
    raise TypeError(f"Unknown transform type: {type(transform).__name__}")


def homography_offsets_batch(corner_offsets: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets (N, 2 k^2) for four-corner parameterizations (N, 8) and a degenerate mask (N,).

    Rows whose target corners are collinear, or whose homography sends a grid
    point to infinity, keep zero offsets (the identity) and are flagged.
    """
    corner_offsets = np.asarray(corner_offsets, dtype=np.float64).reshape(-1, 8)
    offsets = np.zeros((corner_offsets.shape[0], 2 * k * k))
    degenerate = collinear_rows(corner_targets(corner_offsets))
    solvable = np.flatnonzero(~degenerate)
    if solvable.size == 0:
        return offsets, degenerate

    numerator, denominator = _grid_projection(dlt_solve_batch(corner_offsets[solvable]), k)
    finite = np.all(np.abs(denominator) >= MIN_PROJECTIVE_DENOMINATOR, axis=-1)
    degenerate[solvable[~finite]] = True
    delta = numerator[finite] / denominator[finite][..., None] - kernel_grid(k)
    offsets[solvable[finite]] = delta.reshape(-1, 2 * k * k)
    return offsets, degenerate
