"""Keypoint scoring, fusion and selection."""

from .base import VALID_FUSION, VALID_SCORING, DetectorConfig, Keypoint, ScoreMap
from .keypoints import edge_eliminate, nms, select_keypoints, subpixel_refine
from .pyramid import PyramidDetection, build_pyramid, pyramid_detect
from .scores import (
    combine_scores,
    d2_channel_score,
    d2_local_score,
    innetwork_multiscale,
    muldet_fuse,
    peakiness_scores,
    peakiness_vjp,
    score_hierarchy,
)

__all__ = [
    "VALID_FUSION",
    "VALID_SCORING",
    "DetectorConfig",
    "Keypoint",
    "PyramidDetection",
    "ScoreMap",
    "build_pyramid",
    "combine_scores",
    "d2_channel_score",
    "d2_local_score",
    "edge_eliminate",
    "innetwork_multiscale",
    "muldet_fuse",
    "nms",
    "peakiness_scores",
    "peakiness_vjp",
    "pyramid_detect",
    "score_hierarchy",
    "select_keypoints",
    "subpixel_refine",
]
