"""Exception types shared across the toolkit."""


class NerfposeError(Exception):
    """Base class for all toolkit errors."""


# geometry
class NonPositiveDepth(NerfposeError):
    """Point is at or behind the camera plane (z <= 0)."""


class DegenerateFrame(NerfposeError):
    """look_at up hint is parallel to the viewing direction."""


class EmptyInput(NerfposeError):
    """An operation received an empty point/vertex set."""


# field / training
class InsufficientViews(NerfposeError):
    """Training requires at least two posed images."""


class NonFiniteLoss(NerfposeError):
    """Training loss became NaN or infinite."""


class DisjointCrop(NerfposeError):
    """Crop cuboid does not intersect the field domain."""


# sampling / estimator
class BehindCamera(NerfposeError):
    """Object cuboid is not in front of the camera."""


class DegenerateBBox(NerfposeError):
    """2D bounding box has non-positive area."""


class DimensionMismatch(NerfposeError):
    """Images passed to the scorer have different shapes."""


class EmptyMask(NerfposeError):
    """Rendered hypothesis has no pixels with alpha above threshold."""


class EstimationFailed(NerfposeError):
    """Every hypothesis failed to project onto the image."""


# metrics
class EmptyMesh(NerfposeError):
    """Mesh model has no vertices."""


class VertexBehindCamera(NerfposeError):
    """A model vertex projects from z <= 0 in MSPD."""


class DegenerateBox(NerfposeError):
    """Cuboid with non-positive volume in 3D IoU."""


class MissingDiameter(NerfposeError):
    """Recall evaluation needs an object diameter that is absent."""


# io
class MissingFile(NerfposeError):
    """Expected dataset file does not exist."""


class MalformedRecord(NerfposeError):
    """Dataset record failed validation; message carries path and key."""


class MalformedRow(NerfposeError):
    """Result file row failed validation."""


class UnitViolation(NerfposeError):
    """Quantity has a physically impossible value for its unit."""


class UnknownKey(NerfposeError):
    """Config file contains a key that is not recognized."""


class TypeMismatch(NerfposeError):
    """Config value cannot be parsed as the declared type."""
