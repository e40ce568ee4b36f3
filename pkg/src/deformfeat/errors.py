"""Exception hierarchy shared by all deformfeat modules."""


class DeformFeatError(Exception):
    """Base class for deformfeat failures."""


class FormatError(DeformFeatError):
    """Raised when a file has a bad magic, header or version."""


class WeightValidationError(FormatError):
    """Raised when a weight store does not match the architecture table."""

    def __init__(self, layer: str, message: str):
        super().__init__(f"{layer}: {message}")
        self.layer = layer


class TruncatedDataError(OSError):
    """Raised when image or weight data ends early or cannot be decoded."""


class NumericError(DeformFeatError):
    """Raised when a numerical operation cannot produce a finite result."""


class SingularConfigurationError(NumericError):
    """Raised when a linear system is rank deficient (e.g. collinear corners)."""


class SingularProjectionError(NumericError):
    """Raised when a homography maps a grid point to infinity."""


class EstimationError(NumericError):
    """Raised when a robust estimator has too little data."""


class InsufficientCorrespondencesError(NumericError):
    """Raised when fewer correspondences than a loss evaluation needs are valid."""
