"""Bilinear sampling, resizing and blurring of (H, W, C) tensors.

Pixel centres sit at integer coordinates. Coordinates outside
[0, W-1] x [0, H-1] are clamped to the border.
"""

import math

import numpy as np
from scipy import ndimage

from deformfeat.numerics.tensor import Tensor


def bilinear_gather(t: Tensor, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample all channels of t at fractional positions.

    Args:
        t: Tensor (H, W, C)
        xs, ys: Arrays of identical shape S with fractional coordinates

    Returns:
        Array of shape S + (C,)
    """
    height, width = t.shape[:2]
    x = np.clip(xs, 0.0, width - 1)
    y = np.clip(ys, 0.0, height - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), width - 1)
    y0 = np.minimum(np.floor(y).astype(np.intp), height - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = (x - x0).astype(t.dtype)[..., None]
    fy = (y - y0).astype(t.dtype)[..., None]

    top = t[y0, x0] * (1 - fx) + t[y0, x1] * fx
    bottom = t[y1, x0] * (1 - fx) + t[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def bilinear_gather_grad(t: Tensor, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of bilinear_gather w.r.t. the x and y coordinates.

    Derivatives are zero along an axis where the coordinate is clamped.
    Returns two arrays of shape S + (C,).
    """
    height, width = t.shape[:2]
    x = np.clip(xs, 0.0, width - 1)
    y = np.clip(ys, 0.0, height - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), width - 1)
    y0 = np.minimum(np.floor(y).astype(np.intp), height - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]

    v00, v01, v10, v11 = t[y0, x0], t[y0, x1], t[y1, x0], t[y1, x1]
    d_dx = (v01 - v00) * (1 - fy) + (v11 - v10) * fy
    d_dy = (v10 - v00) * (1 - fx) + (v11 - v01) * fx

    inside_x = ((xs >= 0) & (xs <= width - 1))[..., None]
    inside_y = ((ys >= 0) & (ys <= height - 1))[..., None]
    return d_dx * inside_x, d_dy * inside_y


def bilinear_sample(t: Tensor, x: float, y: float, c: int = 0) -> float:
    """Bilinear value of channel c at (x, y) with clamp-to-edge borders."""
    value = bilinear_gather(t, np.asarray([x], dtype=np.float64), np.asarray([y], dtype=np.float64))
    return float(value[0, c])


def resize_bilinear(t: Tensor, out_height: int, out_width: int) -> Tensor:
    """Resize with half-pixel-centre alignment.

    Output pixel u maps to source coordinate (u + 0.5) * in / out - 0.5, which is
    the stride-centre convention when out = in * stride.
    """
    height, width = t.shape[:2]
    if (out_height, out_width) == (height, width):
        return t.copy()
    ys = (np.arange(out_height) + 0.5) * (height / out_height) - 0.5
    xs = (np.arange(out_width) + 0.5) * (width / out_width) - 0.5
    grid_x, grid_y = np.meshgrid(xs, ys)
    return bilinear_gather(t, grid_x, grid_y).astype(t.dtype)


def upsample_bilinear(t: Tensor, factor: int) -> Tensor:
    """Upsample by an integer factor; cell i lands at image coordinate s*i + (s-1)/2."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return t.copy()
    return resize_bilinear(t, t.shape[0] * factor, t.shape[1] * factor)


def feature_to_image(coord: np.ndarray | float, stride: int) -> np.ndarray | float:
    """Image coordinate of a feature cell under the stride-centre convention."""
    return stride * coord + (stride - 1) / 2.0


def image_to_feature(coord: np.ndarray | float, stride: int) -> np.ndarray | float:
    """Inverse of feature_to_image."""
    return (coord - (stride - 1) / 2.0) / stride


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Discrete Gaussian truncated at 3 sigma, normalized to sum 1."""
    radius = max(1, int(math.ceil(3.0 * sigma)))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(t: Tensor, sigma: float) -> Tensor:
    """Separable Gaussian blur with clamp-to-edge borders."""
    kernel = gaussian_kernel(sigma)
    out = ndimage.convolve1d(t, kernel, axis=0, mode="nearest")
    return ndimage.convolve1d(out, kernel, axis=1, mode="nearest").astype(t.dtype)
