"""Convolutional trunk emitting conv1 / conv3 / conv8 feature maps.

The trunk is eight 3x3 layers; the last three are deformable unless the
deformation variant is "none". Every layer but conv8 is followed by
affine-free normalization with stored statistics and a ReLU.
"""

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from deformfeat.constants import DESCRIPTOR_DIM
from deformfeat.errors import NumericError
from deformfeat.logging import timed
from deformfeat.network.dcn import ConvLayer, DeformField, conv2d, deform_conv2d, predict_deform_field
from deformfeat.network.variants import DeformVariantRegistry
from deformfeat.numerics.sampling import bilinear_gather, image_to_feature
from deformfeat.numerics.tensor import Tensor
from deformfeat.numerics.weights import ArchitectureTable, WeightStore

logger = logging.getLogger(__name__)

NO_DEFORMATION = "none"


@dataclass(frozen=True)
class LayerSpec:
    name: str
    channels: int
    stride: int = 1
    deformable: bool = False
    activated: bool = True


DEFAULT_LAYERS = (
    LayerSpec("conv1", 32),
    LayerSpec("conv2", 32),
    LayerSpec("conv3", 64, stride=2),
    LayerSpec("conv4", 64),
    LayerSpec("conv5", 128, stride=2),
    LayerSpec("conv6", 128, deformable=True),
    LayerSpec("conv7", 128, deformable=True),
    LayerSpec("conv8", DESCRIPTOR_DIM, deformable=True, activated=False),
)

# (layer name, cumulative stride) of the tapped feature maps
FEATURE_TAPS = (("conv1", 1), ("conv3", 2), ("conv8", 4))


@dataclass(frozen=True)
class BackboneConfig:
    """Layer table and deformation settings of the trunk.

    dcn selects the deformation variant of the flagged layers ("none" runs
    them as regular convolutions); dcn_layers limits deformation to the last
    n flagged layers.
    """

    layers: tuple[LayerSpec, ...] = DEFAULT_LAYERS
    dcn: str = "free"
    dcn_layers: int = 3
    kernel_size: int = 3
    in_channels: int = 1

    def __post_init__(self):
        if self.dcn != NO_DEFORMATION and self.dcn not in DeformVariantRegistry.list_types():
            raise ValueError(f"Unknown deformation variant: {self.dcn}")
        if sum(1 for spec in self.layers if spec.stride == 2) != 2:
            raise ValueError("Layer table must contain exactly two stride-2 layers")
        flagged = [spec.name for spec in self.layers if spec.deformable]
        if not 0 <= self.dcn_layers <= len(flagged):
            raise ValueError(f"dcn_layers must be within [0, {len(flagged)}], got {self.dcn_layers}")
        names = [spec.name for spec in self.layers]
        for tap, _ in FEATURE_TAPS:
            if tap not in names:
                raise ValueError(f"Layer table lacks feature tap {tap}")

    def deformable_layers(self) -> list[str]:
        """Names of layers actually run as deformable convolutions."""
        if self.dcn == NO_DEFORMATION or self.dcn_layers == 0:
            return []
        flagged = [spec.name for spec in self.layers if spec.deformable]
        return flagged[-self.dcn_layers :]

    def predictor_channels(self) -> int:
        k = self.kernel_size
        return DeformVariantRegistry.create(self.dcn).parameter_count(k) + k * k


def architecture_table(cfg: BackboneConfig) -> ArchitectureTable:
    """Expected weight entry names and shapes for a configuration."""
    k = cfg.kernel_size
    deformable = set(cfg.deformable_layers())
    table: ArchitectureTable = {}
    c_in = cfg.in_channels
    for spec in cfg.layers:
        table[f"{spec.name}/kernel"] = (k, k, c_in, spec.channels)
        table[f"{spec.name}/bias"] = (spec.channels,)
        if spec.activated:
            table[f"{spec.name}/mean"] = (spec.channels,)
            table[f"{spec.name}/variance"] = (spec.channels,)
        if spec.name in deformable:
            table[f"{spec.name}/offset_kernel"] = (k, k, c_in, cfg.predictor_channels())
            table[f"{spec.name}/offset_bias"] = (cfg.predictor_channels(),)
        c_in = spec.channels
    return table


def parameter_count(cfg: BackboneConfig) -> int:
    return int(sum(np.prod(shape) for shape in architecture_table(cfg).values()))


@dataclass
class FeatureLevel:
    name: str
    tensor: Tensor
    stride: int


@dataclass
class FeatureHierarchy:
    """The tapped feature maps in order conv1, conv3, conv8."""

    levels: list[FeatureLevel]
    fields: dict[str, DeformField] = field(default_factory=dict)

    def __post_init__(self):
        taps = [(level.name, level.stride) for level in self.levels]
        if taps != list(FEATURE_TAPS):
            raise ValueError(f"Feature levels must be {list(FEATURE_TAPS)}, got {taps}")

    def level(self, name: str) -> FeatureLevel:
        for level in self.levels:
            if level.name == name:
                return level
        raise KeyError(name)

    @property
    def conv8(self) -> Tensor:
        return self.level("conv8").tensor


class Backbone:
    """Trunk bound to a validated weight store; safe to share across threads."""

    def __init__(self, cfg: BackboneConfig, weights: WeightStore):
        weights.validate(architecture_table(cfg))
        self.cfg = cfg
        deformable = set(cfg.deformable_layers())
        self._layers: list[tuple[ConvLayer, ConvLayer | None]] = []
        for spec in cfg.layers:
            layer = ConvLayer(
                kernel=weights[f"{spec.name}/kernel"],
                bias=weights[f"{spec.name}/bias"],
                stride=spec.stride,
                mean=weights[f"{spec.name}/mean"] if spec.activated else None,
                variance=weights[f"{spec.name}/variance"] if spec.activated else None,
                relu=spec.activated,
            )
            predictor = None
            if spec.name in deformable:
                predictor = ConvLayer(
                    kernel=weights[f"{spec.name}/offset_kernel"],
                    bias=weights[f"{spec.name}/offset_bias"],
                    stride=spec.stride,
                )
            self._layers.append((layer, predictor))

    def forward(self, image: Tensor) -> FeatureHierarchy:
        """Run the layer table on a standardized single-channel tensor."""
        taps = dict(FEATURE_TAPS)
        levels: list[FeatureLevel] = []
        fields: dict[str, DeformField] = {}
        x = image
        with timed(f"Backbone forward on {image.shape[1]}x{image.shape[0]}", logger):
            for spec, (layer, predictor) in zip(self.cfg.layers, self._layers):
                if predictor is None:
                    x = conv2d(x, layer)
                else:
                    deform = predict_deform_field(x, predictor, self.cfg.dcn, self.cfg.kernel_size)
                    fields[spec.name] = deform
                    x = deform_conv2d(x, layer, deform)
                if spec.name in taps:
                    levels.append(FeatureLevel(spec.name, x, taps[spec.name]))
        if not all(np.all(np.isfinite(level.tensor)) for level in levels):
            raise NumericError("Backbone produced non-finite features")
        return FeatureHierarchy(levels=levels, fields=fields)


def forward(image: Tensor, cfg: BackboneConfig, weights: WeightStore) -> FeatureHierarchy:
    """Validate weights against the layer table and run the trunk once.

    Raises:
        WeightValidationError: Weight store does not match the layer table
    """
    return Backbone(cfg, weights).forward(image)


def l2_normalize(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalize along the last axis; zero vectors stay zero and are flagged."""
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    zero = norms[..., 0] == 0.0
    safe = np.where(norms == 0.0, 1.0, norms)
    return vectors / safe, zero


@dataclass
class DenseDescriptors:
    """Unit-norm descriptors on the conv8 grid and positions whose raw vector was zero."""

    values: Tensor
    degenerate: np.ndarray


def dense_descriptors(h: FeatureHierarchy) -> DenseDescriptors:
    values, zero = l2_normalize(h.conv8)
    if np.any(zero):
        logger.warning(f"{int(zero.sum())} dense descriptors are zero vectors")
    return DenseDescriptors(values=values.astype(h.conv8.dtype), degenerate=zero)


class HasPosition(Protocol):
    x: float
    y: float


def sample_descriptors(h: FeatureHierarchy, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinearly sample raw conv8 at image coordinates, then L2-normalize; (N, D)."""
    stride = h.level("conv8").stride
    fx = image_to_feature(np.asarray(xs, dtype=np.float64), stride)
    fy = image_to_feature(np.asarray(ys, dtype=np.float64), stride)
    raw = bilinear_gather(h.conv8, fx, fy)
    normalized, _ = l2_normalize(raw.astype(np.float64))
    return normalized.astype(np.float32)


def sample_descriptor(h: FeatureHierarchy, kp: HasPosition) -> np.ndarray:
    """128-d unit descriptor at a keypoint's sub-pixel image position."""
    return sample_descriptors(h, np.array([kp.x]), np.array([kp.y]))[0]
