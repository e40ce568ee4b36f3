"""Correspondence generation, descriptor/detection losses and gradient checks."""

from .contrastive import (
    LossParams,
    LossResult,
    circle_loss,
    hardest_contrastive,
    weighted_detection_loss,
)
from .correspondences import CameraPair, CorrespondenceSet, warp_points_depth, warp_points_homography
from .gradcheck import GradcheckReport, finite_difference, gradcheck

__all__ = [
    "CameraPair",
    "CorrespondenceSet",
    "GradcheckReport",
    "LossParams",
    "LossResult",
    "circle_loss",
    "finite_difference",
    "gradcheck",
    "hardest_contrastive",
    "warp_points_depth",
    "warp_points_homography",
    "weighted_detection_loss",
]
