"""Regular and modulated deformable 3x3 convolution on (H, W, C) tensors.

Output cell i of a stride-s layer is centred at input coordinate
s * i + (s - 1) / 2, so fractional centres are read bilinearly. Padding is
clamp-to-edge. One deformation group is shared by every input channel.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from deformfeat.errors import NumericError
from deformfeat.geometry.transforms import kernel_grid
from deformfeat.network.variants import DeformVariantRegistry
from deformfeat.numerics.sampling import bilinear_gather, bilinear_gather_grad
from deformfeat.numerics.tensor import Tensor

logger = logging.getLogger(__name__)

NORM_EPSILON = 1e-3


@dataclass(frozen=True)
class ConvLayer:
    """Weights and flags of one k x k convolution.

    kernel has shape (k, k, c_in, c_out). When mean/variance are given the
    output is normalized per channel before the optional ReLU.
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    mean: np.ndarray | None = None
    variance: np.ndarray | None = None
    relu: bool = False

    def __post_init__(self):
        if self.kernel.ndim != 4 or self.kernel.shape[0] != self.kernel.shape[1]:
            raise ValueError(f"Kernel must be (k, k, c_in, c_out), got {self.kernel.shape}")
        if self.kernel.shape[0] % 2 == 0:
            raise ValueError(f"Kernel size must be odd, got {self.kernel.shape[0]}")
        if self.stride not in (1, 2):
            raise ValueError(f"Stride must be 1 or 2, got {self.stride}")
        if self.bias.shape != (self.out_channels,):
            raise ValueError(f"Bias shape {self.bias.shape} does not match {self.out_channels} outputs")
        if self.variance is not None and np.any(self.variance < 0):
            raise ValueError("Normalization variance must be non-negative")

    @property
    def k(self) -> int:
        return int(self.kernel.shape[0])

    @property
    def in_channels(self) -> int:
        return int(self.kernel.shape[2])

    @property
    def out_channels(self) -> int:
        return int(self.kernel.shape[3])

    @property
    def normalize(self) -> bool:
        return self.mean is not None and self.variance is not None

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        return -(-height // self.stride), -(-width // self.stride)


@dataclass
class DeformField:
    """Per-position offsets (H, W, 2 k^2) as interleaved (dx, dy) and modulation (H, W, k^2)."""

    offsets: np.ndarray
    modulation: np.ndarray
    degenerate: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=bool))

    def __post_init__(self):
        if self.offsets.shape[:2] != self.modulation.shape[:2]:
            raise ValueError("Offsets and modulation cover different grids")
        if self.offsets.shape[2] != 2 * self.modulation.shape[2]:
            raise ValueError("Offsets need two values per modulated tap")
        if not np.all(np.isfinite(self.offsets)):
            raise NumericError("Deformation offsets contain non-finite values")

    @property
    def taps(self) -> int:
        return int(self.modulation.shape[2])


def _check_input(x: Tensor, layer: ConvLayer) -> None:
    if x.ndim != 3 or x.shape[2] != layer.in_channels:
        raise ValueError(f"Layer expects {layer.in_channels} input channels, got tensor of shape {x.shape}")


def _centres(x: Tensor, layer: ConvLayer) -> tuple[np.ndarray, np.ndarray]:
    """Input coordinates of every output cell centre, each (H_out, W_out)."""
    out_h, out_w = layer.output_size(x.shape[0], x.shape[1])
    s = layer.stride
    ys = s * np.arange(out_h, dtype=np.float64) + (s - 1) / 2.0
    xs = s * np.arange(out_w, dtype=np.float64) + (s - 1) / 2.0
    grid_x, grid_y = np.meshgrid(xs, ys)
    return grid_x, grid_y


def _gather_tap(x: Tensor, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Read x at tap positions; integer grids skip interpolation."""
    if np.all(xs == np.round(xs)) and np.all(ys == np.round(ys)):
        height, width = x.shape[:2]
        rows = np.clip(ys.astype(np.intp), 0, height - 1)
        cols = np.clip(xs.astype(np.intp), 0, width - 1)
        return x[rows, cols]
    return bilinear_gather(x, xs, ys)


def _epilogue(y: np.ndarray, layer: ConvLayer) -> np.ndarray:
    y = y + layer.bias
    if layer.normalize:
        y = (y - layer.mean) / np.sqrt(layer.variance + NORM_EPSILON)
    if layer.relu:
        y = np.maximum(y, 0.0)
    return y


def conv2d(x: Tensor, layer: ConvLayer, epilogue: bool = True) -> Tensor:
    """y(p) = sum_n w(p_n) x(p + p_n), then bias, normalization and ReLU.

    With epilogue=False only the weighted tap sum is returned.

    Raises:
        ValueError: Channel mismatch between x and the layer
    """
    _check_input(x, layer)
    centre_x, centre_y = _centres(x, layer)
    weights = layer.kernel.astype(x.dtype).reshape(layer.k * layer.k, layer.in_channels, layer.out_channels)

    y = np.zeros(centre_x.shape + (layer.out_channels,), dtype=x.dtype)
    for n, (u, v) in enumerate(kernel_grid(layer.k)):
        y += _gather_tap(x, centre_x + u, centre_y + v) @ weights[n]
    return _epilogue(y, layer).astype(x.dtype) if epilogue else y


def _check_field(x: Tensor, layer: ConvLayer, deform: DeformField) -> None:
    out_shape = layer.output_size(x.shape[0], x.shape[1])
    if deform.offsets.shape[:2] != out_shape:
        raise ValueError(f"Deformation field covers {deform.offsets.shape[:2]}, layer output is {out_shape}")
    if deform.taps != layer.k * layer.k:
        raise ValueError(f"Deformation field has {deform.taps} taps, kernel has {layer.k * layer.k}")


def deform_conv2d(x: Tensor, layer: ConvLayer, deform: DeformField, epilogue: bool = True) -> Tensor:
    """y(p) = sum_n w(p_n) x(p + p_n + dp_n) m_n, sampled bilinearly.

    Raises:
        ValueError: Channel or field shape mismatch
    """
    _check_input(x, layer)
    _check_field(x, layer, deform)
    centre_x, centre_y = _centres(x, layer)
    weights = layer.kernel.astype(x.dtype).reshape(layer.k * layer.k, layer.in_channels, layer.out_channels)

    y = np.zeros(centre_x.shape + (layer.out_channels,), dtype=x.dtype)
    for n, (u, v) in enumerate(kernel_grid(layer.k)):
        xs = centre_x + u + deform.offsets[..., 2 * n]
        ys = centre_y + v + deform.offsets[..., 2 * n + 1]
        sampled = bilinear_gather(x, xs, ys) * deform.modulation[..., n : n + 1]
        y += sampled @ weights[n]
    return _epilogue(y, layer).astype(x.dtype) if epilogue else y


def deform_conv2d_offset_grad(
    x: Tensor, layer: ConvLayer, deform: DeformField, upstream: np.ndarray, epilogue: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of sum(upstream * deform_conv2d(...)) w.r.t. offsets and modulation.

    Bilinear sampling is not differentiable at integer coordinates; the
    one-sided derivative of the containing cell is returned there.

    Returns:
        (d_offsets (H, W, 2 k^2), d_modulation (H, W, k^2))
    """
    _check_input(x, layer)
    _check_field(x, layer, deform)
    centre_x, centre_y = _centres(x, layer)
    weights = layer.kernel.reshape(layer.k * layer.k, layer.in_channels, layer.out_channels)

    grad = np.asarray(upstream, dtype=np.float64)
    if epilogue:
        pre = deform_conv2d(x, layer, deform, epilogue=False) + layer.bias
        if layer.normalize:
            scale = 1.0 / np.sqrt(layer.variance + NORM_EPSILON)
            normalized = (pre - layer.mean) * scale
            grad = grad * scale
        else:
            normalized = pre
        if layer.relu:
            grad = grad * (normalized > 0)

    d_offsets = np.zeros(deform.offsets.shape)
    d_modulation = np.zeros(deform.modulation.shape)
    for n, (u, v) in enumerate(kernel_grid(layer.k)):
        xs = centre_x + u + deform.offsets[..., 2 * n]
        ys = centre_y + v + deform.offsets[..., 2 * n + 1]
        # upstream pulled back to input channels: (H, W, C_in)
        pulled = grad @ weights[n].T
        d_dx, d_dy = bilinear_gather_grad(x, xs, ys)
        m = deform.modulation[..., n]
        d_offsets[..., 2 * n] = m * np.sum(pulled * d_dx, axis=-1)
        d_offsets[..., 2 * n + 1] = m * np.sum(pulled * d_dy, axis=-1)
        d_modulation[..., n] = np.sum(pulled * bilinear_gather(x, xs, ys), axis=-1)
    return d_offsets, d_modulation


def predict_deform_field(x: Tensor, predictor: ConvLayer, variant: str, k: int = 3) -> DeformField:
    """Predict one deformation field shared by all channels.

    The predictor is a regular convolution whose outputs are the variant's
    raw parameters followed by k^2 modulation logits.

    Raises:
        ValueError: Unknown variant or predictor width mismatch
    """
    deform_variant = DeformVariantRegistry.create(variant)
    count = deform_variant.parameter_count(k)
    if predictor.out_channels != count + k * k:
        raise ValueError(
            f"Predictor for {variant!r} must emit {count + k * k} channels, got {predictor.out_channels}"
        )
    raw = conv2d(x, predictor).astype(np.float64)
    mapped = deform_variant.to_offsets(raw[..., :count], k)
    if np.any(mapped.degenerate):
        logger.debug(f"{int(mapped.degenerate.sum())} positions with degenerate {variant} parameters")
    return DeformField(
        offsets=mapped.offsets,
        modulation=expit(raw[..., count:]),
        degenerate=mapped.degenerate,
    )
