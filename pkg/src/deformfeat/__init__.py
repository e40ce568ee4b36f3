"""deformfeat - shape-aware local feature extraction and matching evaluation."""

__version__ = "1.0.0"
