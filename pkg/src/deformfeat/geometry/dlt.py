"""Four-point homography solve with H13 = H23 = 0 and H33 = 1.

Each correspondence (u, v) -> (u', v') contributes the two rows

    [0, 0, -u, -v, v'u, v'v] h = -v'
    [u, v,  0,  0, -u'u, -u'v] h = u'

with h = (h11, h12, h21, h22, h31, h32). The stacked 8x6 system is solved via
normal equations, falling back to the pseudo-inverse when ill conditioned.
"""

from collections.abc import Iterator
from itertools import combinations

import numpy as np

from deformfeat.errors import SingularConfigurationError

SOURCE_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
MIN_TRIANGLE_AREA = 1e-6
MAX_CONDITION = 1e8


def corner_targets(corner_offsets: np.ndarray) -> np.ndarray:
    """Target corners (..., 4, 2) from offsets (..., 8) ordered (du1, dv1, du2, ...)."""
    offsets = np.asarray(corner_offsets, dtype=np.float64)
    return SOURCE_CORNERS + offsets.reshape(offsets.shape[:-1] + (4, 2))


def _triple_areas(targets: np.ndarray) -> Iterator[tuple[tuple[int, int, int], np.ndarray]]:
    """Yield each corner triple (i, j, k) with its triangle areas (N,)."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 4, 2)
    for i, j, k in combinations(range(4), 3):
        a, b, c = targets[:, i], targets[:, j], targets[:, k]
        cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        yield (i, j, k), 0.5 * np.abs(cross)


def collinear_rows(targets: np.ndarray) -> np.ndarray:
    """Mask (N,) of corner sets with a triple of area <= MIN_TRIANGLE_AREA."""
    targets = np.asarray(targets).reshape(-1, 4, 2)
    mask = np.zeros(targets.shape[0], dtype=bool)
    for _, area in _triple_areas(targets):
        mask |= area <= MIN_TRIANGLE_AREA
    return mask


def check_not_collinear(targets: np.ndarray) -> None:
    """Every corner triple must span a triangle of area > MIN_TRIANGLE_AREA.

    Raises:
        SingularConfigurationError: If any triple is (nearly) collinear
    """
    for triple, area in _triple_areas(targets):
        if np.any(area <= MIN_TRIANGLE_AREA):
            raise SingularConfigurationError(f"Collinear target corners {triple}")


def dlt_system(targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Build the stacked system M (N, 8, 6) and b (N, 8) for targets (N, 4, 2)."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 4, 2)
    n = targets.shape[0]
    u = np.broadcast_to(SOURCE_CORNERS[:, 0], (n, 4))
    v = np.broadcast_to(SOURCE_CORNERS[:, 1], (n, 4))
    up, vp = targets[..., 0], targets[..., 1]
    zeros = np.zeros_like(up)

    first = np.stack([zeros, zeros, -u, -v, vp * u, vp * v], axis=-1)
    second = np.stack([u, v, zeros, zeros, -up * u, -up * v], axis=-1)
    matrix = np.stack([first, second], axis=2).reshape(n, 8, 6)
    rhs = np.stack([-vp, up], axis=2).reshape(n, 8)
    return matrix, rhs


def solve_system(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Least-squares solve of a batch of 8x6 systems."""
    normal = np.einsum("nij,nik->njk", matrix, matrix)
    projected = np.einsum("nij,ni->nj", matrix, rhs)
    h = np.empty(projected.shape)

    conditions = np.linalg.cond(normal)
    good = np.isfinite(conditions) & (conditions <= MAX_CONDITION)
    if np.any(good):
        h[good] = np.linalg.solve(normal[good], projected[good][..., None])[..., 0]
    if np.any(~good):
        h[~good] = np.einsum("nij,nj->ni", np.linalg.pinv(matrix[~good]), rhs[~good])
    return h


def h_to_matrix(h: np.ndarray) -> np.ndarray:
    """Assemble (N, 3, 3) homographies from (N, 6) solved parameters."""
    n = h.shape[0]
    out = np.zeros((n, 3, 3))
    out[:, 0, :2] = h[:, 0:2]
    out[:, 1, :2] = h[:, 2:4]
    out[:, 2, :2] = h[:, 4:6]
    out[:, 2, 2] = 1.0
    return out


def dlt_solve_batch(corner_offsets: np.ndarray) -> np.ndarray:
    """Solve one constrained homography per row of corner offsets (N, 8)."""
    targets = corner_targets(np.asarray(corner_offsets).reshape(-1, 8))
    check_not_collinear(targets)
    matrix, rhs = dlt_system(targets)
    return h_to_matrix(solve_system(matrix, rhs))


def dlt_solve(corner_offsets: np.ndarray) -> np.ndarray:
    """Solve the constrained homography for 8 corner offsets.

    Source corners are (-1,-1), (1,-1), (1,1), (-1,1); targets are source +
    offsets.

    Returns:
        3x3 matrix with H13 = H23 = 0 and H33 = 1

    Raises:
        SingularConfigurationError: Collinear target corners
    """
    offsets = np.asarray(corner_offsets, dtype=np.float64)
    if offsets.shape != (8,):
        raise ValueError(f"Expected 8 corner offsets, got shape {offsets.shape}")
    return dlt_solve_batch(offsets[None])[0]
