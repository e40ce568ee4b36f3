"""Seeded synthetic scenes: camera pairs, homographies, images and descriptors."""

import math

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial.transform import Rotation

from deformfeat.losses.correspondences import CameraPair


def intrinsics(size: tuple[int, int], focal: float) -> np.ndarray:
    width, height = size
    return np.array([[focal, 0.0, (width - 1) / 2.0], [0.0, focal, (height - 1) / 2.0], [0.0, 0.0, 1.0]])


def random_camera_pair(
    rng: np.random.Generator,
    size: tuple[int, int] = (128, 96),
    focal: float = 100.0,
    rotation_deg: float = 5.0,
    translation: float = 0.3,
    depth_range: tuple[float, float] = (4.0, 8.0),
    slope: float = 0.5,
) -> CameraPair:
    """Two views of a plane (tilted by slope) at a depth drawn from depth_range.

    The relative rotation has a random axis and an angle up to rotation_deg;
    the translation has norm translation.
    """
    width, height = size
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(rng.uniform(-rotation_deg, rotation_deg))
    R = Rotation.from_rotvec(axis * angle).as_matrix()
    direction = rng.normal(size=3)
    t = translation * direction / np.linalg.norm(direction)

    base = rng.uniform(*depth_range)
    xs = (np.arange(width) - (width - 1) / 2.0) / width
    ys = (np.arange(height) - (height - 1) / 2.0) / height
    tilt_x, tilt_y = rng.uniform(-slope, slope, size=2)
    depth = base * (1.0 + tilt_x * xs[None, :] + tilt_y * ys[:, None])
    K = intrinsics(size, focal)
    return CameraPair(K_a=K, K_b=K.copy(), R=R, t=t, depth=np.maximum(depth, 1e-3))


def homography_from_points(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Exact homography through four point pairs (H33 = 1)."""
    rows, rhs = [], []
    for (x, y), (u, v) in zip(source, target):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.extend([u, v])
    h = np.linalg.solve(np.array(rows, dtype=np.float64), np.array(rhs, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def random_homography(rng: np.random.Generator, size: tuple[int, int], perturbation: float = 0.1) -> np.ndarray:
    """Homography moving each image corner by up to perturbation x image size."""
    width, height = size
    corners = np.array([[0.0, 0.0], [width - 1, 0.0], [width - 1, height - 1], [0.0, height - 1]])
    jitter = rng.uniform(-perturbation, perturbation, size=(4, 2)) * np.array([width, height])
    return homography_from_points(corners, corners + jitter)


def smooth_image(rng: np.random.Generator, size: tuple[int, int], blobs: int = 40, sigma: float = 2.0) -> np.ndarray:
    """Gray image in [0, 1] made of random blurred blobs on a gentle gradient; (H, W, 1)."""
    width, height = size
    image = np.zeros((height, width))
    rows = rng.integers(0, height, size=blobs)
    cols = rng.integers(0, width, size=blobs)
    image[rows, cols] = rng.uniform(0.5, 1.0, size=blobs)
    image = gaussian_filter(image, sigma=sigma, mode="nearest")
    image += 0.1 * np.linspace(0.0, 1.0, width)[None, :]
    image -= image.min()
    peak = image.max()
    if peak > 0:
        image /= peak
    return image[..., None].astype(np.float32)


def unit_descriptors(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    vectors = rng.normal(size=(count, dim))
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


def matched_descriptors(
    rng: np.random.Generator, count: int, dim: int, noise: float = 0.1
) -> tuple[np.ndarray, np.ndarray]:
    """Descriptor pairs where b is a noisy, renormalized copy of a."""
    a = unit_descriptors(rng, count, dim)
    b = a + noise * rng.normal(size=a.shape)
    return a, b / np.linalg.norm(b, axis=1, keepdims=True)


def scattered_cells(rng: np.random.Generator, count: int, extent: int = 64) -> np.ndarray:
    """Distinct integer feature-cell coordinates (count, 2)."""
    flat = rng.choice(extent * extent, size=count, replace=False)
    return np.stack([flat % extent, flat // extent], axis=1).astype(np.float64)
