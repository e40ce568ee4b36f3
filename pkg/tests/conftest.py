"""Pytest configuration for the test suite."""

from pathlib import Path

import numpy as np
import pytest

from deformfeat.config import RunConfig
from deformfeat.losses.synthetic import smooth_image
from deformfeat.numerics.image_io import save_image
from deformfeat.numerics.tensor import as_tensor

# =============================================================================
# Shared image fixtures (DRY)
# =============================================================================


def textured_pixels(height: int, width: int, seed: int = 0) -> np.ndarray:
    """Smooth random texture in [0, 1] with enough structure to detect on."""
    rng = np.random.default_rng(seed)
    return smooth_image(rng, (width, height), blobs=max(20, height * width // 150))


def write_pgm(path: Path, pixels: np.ndarray) -> Path:
    save_image(as_tensor(pixels), path)
    return path


@pytest.fixture
def rng():
    """Seeded generator; every test gets the same stream."""
    return np.random.default_rng(1234)


@pytest.fixture
def textured_image(tmp_path):
    """A 96x80 textured PGM on disk."""
    return write_pgm(tmp_path / "textured.pgm", textured_pixels(80, 96))


@pytest.fixture
def gray_image(tmp_path):
    """A uniform mid-gray PGM on disk."""
    return write_pgm(tmp_path / "gray.pgm", np.full((64, 64), 0.5))


@pytest.fixture
def fast_config():
    """Run config tuned for small test images."""
    return RunConfig(top_k=200, score_min=0.0, dcn="free", seed=7)


@pytest.fixture
def isolated_config_path(tmp_path):
    """Config path inside the test's temp dir (never ~/.config)."""
    return tmp_path / "config.ini"


@pytest.fixture
def make_image(tmp_path):
    """Factory writing a textured PGM: make_image(name, height, width, seed)."""

    def _make(name: str = "image.pgm", height: int = 80, width: int = 96, seed: int = 0) -> Path:
        return write_pgm(tmp_path / name, textured_pixels(height, width, seed))

    return _make
