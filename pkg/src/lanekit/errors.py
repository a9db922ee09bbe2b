"""Exception types shared across the package.

Every error carries a stable ``kind`` string so the CLI can emit
machine-readable error lines.
"""


class LaneKitError(Exception):
    kind = "Error"


class InvalidSpec(LaneKitError):
    kind = "InvalidSpec"


class EmptyCloud(LaneKitError):
    kind = "EmptyCloud"


class InsufficientPoints(LaneKitError):
    kind = "InsufficientPoints"


class EmptyProjection(LaneKitError):
    kind = "EmptyProjection"


class ShapeMismatch(LaneKitError):
    kind = "ShapeMismatch"


class ConfigMismatch(LaneKitError):
    kind = "ConfigMismatch"


class DimensionMismatch(LaneKitError):
    kind = "DimensionMismatch"


class EmptyMask(LaneKitError):
    kind = "EmptyMask"


class EmptySet(LaneKitError):
    kind = "EmptySet"


class EmptyDataset(LaneKitError):
    kind = "EmptyDataset"


class AnchorMismatch(LaneKitError):
    kind = "AnchorMismatch"


class ConfigError(LaneKitError):
    """Bad or missing configuration. ``key`` names the offending entry."""

    kind = "ConfigError"

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
