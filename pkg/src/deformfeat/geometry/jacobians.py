"""Closed-form Jacobians of the geometric operations.

Every op has an evaluator returning a flat output vector and an analytic
Jacobian of shape (outputs, params), so finite-difference checks can compare
them entry by entry.
"""

from typing import Callable

import numpy as np

from deformfeat.geometry.dlt import SOURCE_CORNERS, corner_targets, dlt_solve, dlt_system
from deformfeat.geometry.transforms import (
    affine_matrix,
    kernel_grid,
    offsets_from_homographies,
    offsets_from_linear,
    rotation,
    shape_matrix,
    similarity_matrix,
)

JACOBIAN_OPS = ("similarity", "affine", "dlt_solve", "offsets")
OFFSET_VARIANTS = ("free", "similarity", "affine", "homography")


def _rotation_derivative(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[-s, c], [-c, -s]])


def similarity_jacobian(params: np.ndarray) -> np.ndarray:
    """d vec(S) / d(lambda, theta), shape (4, 2)."""
    scale, theta = params
    d_scale = rotation(theta)
    d_theta = scale * _rotation_derivative(theta)
    return np.stack([d_scale.ravel(), d_theta.ravel()], axis=1)


def _shape_derivatives(a11: float, a21: float, a22: float) -> list[np.ndarray]:
    """d A' / d(a11, a21, a22) inside the open residual domain."""
    d11, d22 = 1.0 + a11, 1.0 + a22
    s11, s22 = np.sign(d11), np.sign(d22)
    m11, m22 = abs(d11), abs(d22)
    by_a11 = np.array([[0.0, 0.0], [-a21 * s11 / (m11**2 * m22), 0.0]])
    by_a21 = np.array([[0.0, 0.0], [1.0 / (m11 * m22), 0.0]])
    by_a22 = np.array([[-s22 / m22**2, 0.0], [-a21 * s22 / (m11 * m22**2), s22]])
    return [by_a11, by_a21, by_a22]


def affine_jacobian(params: np.ndarray) -> np.ndarray:
    """d vec(A) / d(lambda, theta, a11, a21, a22), shape (4, 5)."""
    scale, theta, a11, a21, a22 = params
    rot = rotation(theta)
    shape = shape_matrix(a11, a21, a22)
    columns = [rot @ shape, scale * _rotation_derivative(theta) @ shape]
    columns += [scale * rot @ d for d in _shape_derivatives(a11, a21, a22)]
    return np.stack([c.ravel() for c in columns], axis=1)


def dlt_parameter_jacobian(corner_offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solution h (6,) and d h / d offsets (6, 8) of the least-squares DLT.

    Differentiates the normal equations:
        dh = N^-1 (dM^T (b - M h) + M^T (db - dM h)),  N = M^T M
    which reduces to M^-1 (db - dM h) when the system is consistent.
    """
    targets = corner_targets(np.asarray(corner_offsets, dtype=np.float64))
    matrix, rhs = dlt_system(targets)
    matrix, rhs = matrix[0], rhs[0]
    normal = matrix.T @ matrix
    h = np.linalg.solve(normal, matrix.T @ rhs)
    residual = rhs - matrix @ h

    jac = np.zeros((6, 8))
    for corner in range(4):
        u, v = SOURCE_CORNERS[corner]
        # d/du' touches the second row of this corner, d/dv' the first
        for axis, row, d_row, d_rhs in (
            (0, 2 * corner + 1, np.array([0, 0, 0, 0, -u, -v]), 1.0),
            (1, 2 * corner, np.array([0, 0, 0, 0, u, v]), -1.0),
        ):
            d_matrix = np.zeros((8, 6))
            d_matrix[row] = d_row
            d_b = np.zeros(8)
            d_b[row] = d_rhs
            rhs_term = d_matrix.T @ residual + matrix.T @ (d_b - d_matrix @ h)
            jac[:, 2 * corner + axis] = np.linalg.solve(normal, rhs_term)
    return h, jac


def dlt_jacobian(corner_offsets: np.ndarray) -> np.ndarray:
    """d vec(H) / d offsets, shape (9, 8); the fixed entries have zero rows."""
    _, jac_h = dlt_parameter_jacobian(corner_offsets)
    out = np.zeros((9, 8))
    # h = (h11, h12, h21, h22, h31, h32) -> flat indices 0, 1, 3, 4, 6, 7
    out[[0, 1, 3, 4, 6, 7]] = jac_h
    return out


def _homography_offsets_jacobian(corner_offsets: np.ndarray, k: int) -> np.ndarray:
    h, jac_h = dlt_parameter_jacobian(corner_offsets)
    grid = kernel_grid(k)
    u, v = grid[:, 0], grid[:, 1]
    a = h[0] * u + h[1] * v
    b = h[2] * u + h[3] * v
    c = h[4] * u + h[5] * v + 1.0
    zeros = np.zeros_like(u)
    # d(u', v') / d h for each grid point, (k^2, 2, 6)
    d_up = np.stack([u / c, v / c, zeros, zeros, -a * u / c**2, -a * v / c**2], -1)
    d_vp = np.stack([zeros, zeros, u / c, v / c, -b * u / c**2, -b * v / c**2], -1)
    d_point = np.stack([d_up, d_vp], axis=1)
    return (d_point @ jac_h).reshape(2 * k * k, 8)


def offsets_jacobian(variant: str, params: np.ndarray, k: int = 3) -> np.ndarray:
    """d offsets / d params for a transform variant, shape (2 k^2, P)."""
    params = np.asarray(params, dtype=np.float64)
    if variant == "free":
        return np.eye(2 * k * k)
    if variant == "homography":
        return _homography_offsets_jacobian(params, k)
    grid = kernel_grid(k)
    if variant == "similarity":
        d_matrix = similarity_jacobian(params)
    elif variant == "affine":
        d_matrix = affine_jacobian(params)
    else:
        raise ValueError(f"Unknown offset variant: {variant}")
    # d(T p) = dT p for each parameter column
    columns = [np.einsum("ij,nj->ni", d_matrix[:, j].reshape(2, 2), grid).ravel() for j in range(d_matrix.shape[1])]
    return np.stack(columns, axis=1)


def evaluate_op(op: str, params: np.ndarray, variant: str = "similarity", k: int = 3) -> np.ndarray:
    """Flat output of a geometric op at params (the function being differentiated)."""
    params = np.asarray(params, dtype=np.float64)
    if op == "similarity":
        return similarity_matrix(params[0], params[1]).ravel()
    if op == "affine":
        return affine_matrix(*params).ravel()
    if op == "dlt_solve":
        return dlt_solve(params).ravel()
    if op == "offsets":
        if variant == "free":
            return params.copy()
        if variant == "similarity":
            return offsets_from_linear(similarity_matrix(params[0], params[1]), k)
        if variant == "affine":
            return offsets_from_linear(affine_matrix(*params), k)
        if variant == "homography":
            return offsets_from_homographies(dlt_solve(params), k)
        raise ValueError(f"Unknown offset variant: {variant}")
    raise ValueError(f"Unknown op: {op}. Valid: {', '.join(JACOBIAN_OPS)}")


def jacobian_analytic(op: str, params: np.ndarray, variant: str = "similarity", k: int = 3) -> np.ndarray:
    """Closed-form Jacobian of evaluate_op(op, ...) w.r.t. params.

    Raises:
        SingularConfigurationError: For dlt_solve / homography offsets at collinear corners
    """
    params = np.asarray(params, dtype=np.float64)
    if op == "similarity":
        return similarity_jacobian(params)
    if op == "affine":
        return affine_jacobian(params)
    if op == "dlt_solve":
        dlt_solve(params)  # collinearity guard
        return dlt_jacobian(params)
    if op == "offsets":
        if variant == "homography":
            dlt_solve(params)
        return offsets_jacobian(variant, params, k)
    raise ValueError(f"Unknown op: {op}. Valid: {', '.join(JACOBIAN_OPS)}")


def op_function(op: str, variant: str = "similarity", k: int = 3) -> Callable[[np.ndarray], np.ndarray]:
    """Bind evaluate_op for use with gradcheck."""
    return lambda params: evaluate_op(op, params, variant, k)


def op_jacobian(op: str, variant: str = "similarity", k: int = 3) -> Callable[[np.ndarray], np.ndarray]:
    """Bind jacobian_analytic for use with gradcheck."""
    return lambda params: jacobian_analytic(op, params, variant, k)
