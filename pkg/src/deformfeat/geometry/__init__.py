"""Constrained local deformations: similarity, affine and four-point homography."""

from .dlt import dlt_solve, dlt_solve_batch
from .jacobians import evaluate_op, jacobian_analytic
from .transforms import (
    Affine,
    FreeForm,
    Homography,
    LocalTransform,
    Similarity,
    activate_angle,
    activate_scale,
    affine_matrix,
    kernel_grid,
    offsets_from_transform,
    similarity_matrix,
)

__all__ = [
    "Affine",
    "FreeForm",
    "Homography",
    "LocalTransform",
    "Similarity",
    "activate_angle",
    "activate_scale",
    "affine_matrix",
    "dlt_solve",
    "dlt_solve_batch",
    "evaluate_op",
    "jacobian_analytic",
    "kernel_grid",
    "offsets_from_transform",
    "similarity_matrix",
]
