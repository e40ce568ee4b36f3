"""Deformation variants: how predicted parameters turn into sampling offsets."""

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from deformfeat.geometry.transforms import (
    activate_residuals,
    activate_scale,
    affine_matrix,
    homography_offsets_batch,
    offsets_from_linear,
    similarity_matrix,
)


@dataclass
class VariantOffsets:
    """Offsets for every position plus positions that hit a degenerate activation."""

    offsets: np.ndarray
    degenerate: np.ndarray


class DeformVariant(Protocol):
    """Protocol for deformation variants."""

    @property
    def name(self) -> str: ...

    def parameter_count(self, k: int) -> int:
        """Number of raw parameters predicted per position."""
        ...

    def to_offsets(self, raw: np.ndarray, k: int) -> VariantOffsets:
        """Map raw parameters (H, W, P) to offsets (H, W, 2 k^2)."""
        ...


def _angles(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """theta = arctan2(x, y) from two raw channels; (0, 0) is degenerate and maps to 0."""
    x, y = raw[..., 0], raw[..., 1]
    return np.arctan2(x, y), (x == 0.0) & (y == 0.0)


class FreeFormVariant:
    name = "free"

    def parameter_count(self, k: int) -> int:
        return 2 * k * k

    def to_offsets(self, raw: np.ndarray, k: int) -> VariantOffsets:
        return VariantOffsets(raw.astype(np.float64), np.zeros(raw.shape[:2], dtype=bool))


class SimilarityVariant:
    """Scale and orientation: (raw scale, angle x, angle y)."""

    name = "similarity"

    def parameter_count(self, k: int) -> int:
        return 3

    def to_offsets(self, raw: np.ndarray, k: int) -> VariantOffsets:
        raw = raw.astype(np.float64)
        theta, degenerate = _angles(raw[..., 1:3])
        matrices = similarity_matrix(activate_scale(raw[..., 0]), theta)
        return VariantOffsets(offsets_from_linear(matrices, k), degenerate)


class AffineVariant:
    """Similarity plus unit-determinant shape: (raw scale, angle x, angle y, a11, a21, a22)."""

    name = "affine"

    def parameter_count(self, k: int) -> int:
        return 6

    def to_offsets(self, raw: np.ndarray, k: int) -> VariantOffsets:
        raw = raw.astype(np.float64)
        theta, degenerate = _angles(raw[..., 1:3])
        residuals = activate_residuals(raw[..., 3:6])
        matrices = affine_matrix(
            activate_scale(raw[..., 0]), theta, residuals[..., 0], residuals[..., 1], residuals[..., 2]
        )
        return VariantOffsets(offsets_from_linear(matrices, k), degenerate)


class HomographyVariant:
    """Four corner offsets bounded to (-1, 1) by tanh, solved per position.

    Positions whose corners cannot be solved fall back to the identity and are
    flagged degenerate; the rest of the field is unaffected.
    """

    name = "homography"

    def parameter_count(self, k: int) -> int:
        return 8

    def to_offsets(self, raw: np.ndarray, k: int) -> VariantOffsets:
        height, width = raw.shape[:2]
        corners = np.tanh(raw.astype(np.float64)).reshape(-1, 8)
        offsets, degenerate = homography_offsets_batch(corners, k)
        return VariantOffsets(offsets.reshape(height, width, 2 * k * k), degenerate.reshape(height, width))


class DeformVariantRegistry:
    """Registry for deformation variant factories."""

    _factories: dict[str, Callable[[], DeformVariant]] = {}

    @classmethod
    def register(cls, variant_type: str, factory: Callable[[], DeformVariant]) -> None:
        cls._factories[variant_type] = factory

    @classmethod
    def create(cls, variant_type: str) -> DeformVariant:
        factory = cls._factories.get(variant_type)
        if factory is None:
            raise ValueError(f"Unknown deformation variant: {variant_type}")
        return factory()

    @classmethod
    def list_types(cls) -> list[str]:
        return sorted(cls._factories.keys())


DeformVariantRegistry.register("free", FreeFormVariant)
DeformVariantRegistry.register("similarity", SimilarityVariant)
DeformVariantRegistry.register("affine", AffineVariant)
DeformVariantRegistry.register("homography", HomographyVariant)
