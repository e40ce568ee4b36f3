"""Dense (height, width, channels) tensors and the image container."""

from dataclasses import dataclass
from enum import Enum

import numpy as np
import numpy.typing as npt

from deformfeat.errors import NumericError

Tensor = npt.NDArray[np.floating]


class Precision(Enum):
    """Storage precision of tensors.

    FLOAT32 is the inference path; FLOAT64 is the evaluation mode used by
    gradient checks.
    """

    FLOAT32 = "float32"
    FLOAT64 = "float64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.value)


def as_tensor(data: npt.ArrayLike, precision: Precision = Precision.FLOAT32) -> Tensor:
    """Convert data to a finite rank-3 tensor of the requested precision.

    Rank-2 input gains a trailing channel axis.

    Raises:
        NumericError: If the data is not rank 2/3 or contains NaN/Inf
    """
    array = np.asarray(data, dtype=precision.dtype)
    if array.ndim == 2:
        array = array[:, :, None]
    if array.ndim != 3:
        raise NumericError(f"Expected (height, width, channels) tensor, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise NumericError("Tensor contains non-finite values")
    return np.ascontiguousarray(array)


def precision_of(t: Tensor) -> Precision:
    """Precision matching the dtype of an existing tensor."""
    return Precision.FLOAT64 if t.dtype == np.float64 else Precision.FLOAT32


@dataclass(frozen=True)
class Image:
    """Decoded image with pixel values in [0, 1]."""

    pixels: Tensor
    source_path: str = ""

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def channels(self) -> int:
        return int(self.pixels.shape[2])

    @property
    def size(self) -> tuple[int, int]:
        """(width, height) of the image."""
        return self.width, self.height
