"""Keypoint and descriptor file persistence."""

from .features import FeatureFile, FeatureSet, read_features, write_features

__all__ = [
    "FeatureFile",
    "FeatureSet",
    "read_features",
    "write_features",
]
