"""Regular and deformable convolutions and the feature trunk."""

from .backbone import (
    Backbone,
    BackboneConfig,
    FeatureHierarchy,
    architecture_table,
    dense_descriptors,
    forward,
    sample_descriptor,
    sample_descriptors,
)
from .dcn import ConvLayer, DeformField, conv2d, deform_conv2d, predict_deform_field
from .variants import DeformVariantRegistry

__all__ = [
    "Backbone",
    "BackboneConfig",
    "ConvLayer",
    "DeformField",
    "DeformVariantRegistry",
    "FeatureHierarchy",
    "architecture_table",
    "conv2d",
    "deform_conv2d",
    "dense_descriptors",
    "forward",
    "predict_deform_field",
    "sample_descriptor",
    "sample_descriptors",
]
