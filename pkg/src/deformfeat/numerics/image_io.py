"""Image loading and preprocessing (binary PGM/PPM)."""

import logging
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from deformfeat.constants import STD_CLAMP
from deformfeat.errors import FormatError, TruncatedDataError
from deformfeat.numerics.tensor import Image, Precision, Tensor, as_tensor

logger = logging.getLogger(__name__)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# Pillow reports both P5 and P6 as the "PPM" format
_ACCEPTED_MODES = {"L": 1, "RGB": 3}


def load_image(path: str | Path) -> Image:
    """Load a binary PGM (P5) or PPM (P6) file with max value 255.

    Args:
        path: Image file path

    Returns:
        Image with pixels scaled to [0, 1]; colour input keeps 3 channels

    Raises:
        FormatError: Malformed header or unsupported pixel format
        TruncatedDataError: Truncated or unreadable pixel data
    """
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file (magic {magic!r})")

    try:
        pil = PILImage.open(path)
    except (UnidentifiedImageError, ValueError, SyntaxError) as e:
        raise FormatError(f"{path}: malformed header: {e}") from e

    with pil:
        if pil.format != "PPM" or pil.mode not in _ACCEPTED_MODES:
            raise FormatError(f"{path}: unsupported PGM/PPM variant (mode {pil.mode})")
        try:
            pil.load()
        except (OSError, ValueError) as e:
            raise TruncatedDataError(f"{path}: truncated image data: {e}") from e
        array = np.asarray(pil, dtype=np.float32)

    pixels = as_tensor(array / 255.0)
    logger.debug(f"Loaded {path} ({pixels.shape[1]}x{pixels.shape[0]}x{pixels.shape[2]})")
    return Image(pixels=pixels, source_path=str(path))


def save_image(img: Image | Tensor, path: str | Path) -> None:
    """Write pixels in [0, 1] as P5 (1 channel) or P6 (3 channels)."""
    pixels = img.pixels if isinstance(img, Image) else img
    data = np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    if data.shape[2] == 1:
        PILImage.fromarray(data[:, :, 0], mode="L").save(path, format="PPM")
    else:
        PILImage.fromarray(data, mode="RGB").save(path, format="PPM")


def to_grayscale(img: Image) -> Image:
    """Convert to a single luma channel (0.299 R + 0.587 G + 0.114 B)."""
    if img.channels == 1:
        return img
    luma = np.tensordot(img.pixels.astype(np.float64), LUMA_WEIGHTS, axes=([2], [0]))
    return Image(pixels=as_tensor(luma, Precision(img.pixels.dtype.name)), source_path=img.source_path)


def standardize(img: Image | Tensor, precision: Precision = Precision.FLOAT32) -> Tensor:
    """Standardize the whole tensor to zero mean and unit (population) std.

    The standard deviation is clamped at STD_CLAMP so constant images map to zeros.
    """
    pixels = img.pixels if isinstance(img, Image) else img
    data = np.asarray(pixels, dtype=np.float64)
    if data.size < 2:
        raise ValueError("standardize needs at least 2 pixels")
    sigma = max(float(data.std()), STD_CLAMP)
    return as_tensor((data - data.mean()) / sigma, precision)
