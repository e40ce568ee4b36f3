"""Tensor storage, image I/O, sampling and weight files."""

from .image_io import load_image, save_image, standardize, to_grayscale
from .sampling import (
    bilinear_gather,
    bilinear_sample,
    gaussian_blur,
    resize_bilinear,
    upsample_bilinear,
)
from .tensor import Image, Precision, Tensor, as_tensor
from .weights import WeightStore, read_weights, seeded_random_weights, write_weights

__all__ = [
    "Image",
    "Precision",
    "Tensor",
    "WeightStore",
    "as_tensor",
    "bilinear_gather",
    "bilinear_sample",
    "gaussian_blur",
    "load_image",
    "read_weights",
    "resize_bilinear",
    "save_image",
    "seeded_random_weights",
    "standardize",
    "to_grayscale",
    "upsample_bilinear",
    "write_weights",
]
