"""Image to keypoints-and-descriptors extraction."""

import logging
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .detection.base import DetectorConfig, Keypoint
from .detection.keypoints import select_keypoints
from .detection.pyramid import PyramidDetection, pyramid_detect
from .detection.scores import score_hierarchy
from .network.backbone import Backbone, BackboneConfig, architecture_table, sample_descriptors
from .numerics.image_io import load_image, standardize, to_grayscale
from .numerics.tensor import Image, Precision
from .numerics.weights import WeightStore, read_weights, seeded_random_weights
from .storage.features import FeatureSet

logger = logging.getLogger(__name__)


def load_network_weights(cfg: BackboneConfig, weights_path: str = "", seed: int = 0) -> WeightStore:
    """Weights from an ASLW file, or seeded random weights when no path is given.

    Raises:
        FormatError: Weight file is malformed or does not match the layer table
    """
    table = architecture_table(cfg)
    if weights_path:
        logger.debug(f"Loading weights from {weights_path}")
        return read_weights(weights_path, table)
    logger.debug(f"Using seeded random weights (seed={seed})")
    return seeded_random_weights(seed, table)


class FeatureExtractor:
    """Backbone plus detector bound to one configuration.

    Instances hold no per-image state and may be shared between worker threads.
    """

    def __init__(
        self,
        backbone_cfg: BackboneConfig,
        detector_cfg: DetectorConfig,
        weights: WeightStore,
        precision: Precision = Precision.FLOAT32,
        threads: int = 1,
    ):
        self.backbone = Backbone(backbone_cfg, weights)
        self.detector_cfg = detector_cfg
        self.precision = precision
        self.threads = threads

    @classmethod
    def from_config(cls, config: RunConfig) -> "FeatureExtractor":
        backbone_cfg = config.backbone_config()
        weights = load_network_weights(backbone_cfg, config.weights, config.seed)
        return cls(
            backbone_cfg,
            config.detector_config(),
            weights,
            precision=Precision(config.precision),
            threads=config.threads,
        )

    def extract(self, image: Image) -> FeatureSet:
        """Detect and describe keypoints of a decoded image."""
        start = time.perf_counter()
        tensor = standardize(to_grayscale(image), self.precision)
        height, width = tensor.shape[:2]

        if self.detector_cfg.fusion == "pyramid":
            detection = pyramid_detect(tensor, self.backbone.forward, self.detector_cfg, self.threads)
            keypoints = detection.keypoints
            descriptors = self._pyramid_descriptors(detection)
        else:
            hierarchy = self.backbone.forward(tensor)
            score = score_hierarchy(hierarchy, self.detector_cfg, height, width)
            keypoints = select_keypoints(score, self.detector_cfg)
            xs = np.array([kp.x for kp in keypoints])
            ys = np.array([kp.y for kp in keypoints])
            descriptors = sample_descriptors(hierarchy, xs, ys)

        logger.info(
            f"{image.source_path or 'image'}: {len(keypoints)} keypoints "
            f"in {(time.perf_counter() - start) * 1000:.0f}ms"
        )
        return FeatureSet(keypoints=list(keypoints), descriptors=descriptors, image_size=(width, height))

    def extract_path(self, path: str | Path) -> FeatureSet:
        return self.extract(load_image(path))

    def _pyramid_descriptors(self, detection: PyramidDetection) -> np.ndarray:
        descriptors = np.zeros((len(detection.keypoints), self.backbone_dim), dtype=np.float32)
        by_level: dict[int, list[int]] = {}
        for i, kp in enumerate(detection.keypoints):
            by_level.setdefault(detection.level_index(kp), []).append(i)
        for level_index, rows in by_level.items():
            level = detection.levels[level_index]
            points: list[Keypoint] = [detection.keypoints[i] for i in rows]
            xs, ys = level.to_level(np.array([kp.x for kp in points]), np.array([kp.y for kp in points]))
            descriptors[rows] = sample_descriptors(detection.hierarchies[level_index], xs, ys)
        return descriptors

    @property
    def backbone_dim(self) -> int:
        return self.backbone.cfg.layers[-1].channels
