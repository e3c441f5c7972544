"""Exception types raised across the package."""


class RotsymError(Exception):
    """Base class for all package errors."""


class ZeroAxisError(RotsymError, ValueError):
    pass


class DegenerateSeedError(RotsymError, ValueError):
    pass


class BehindCameraError(RotsymError, ValueError):
    """A point lies behind (or too close to) the camera plane.

    ``index`` names the failing point when projecting a polygon:
    ``"center"`` or the vertex position.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ShapeError(RotsymError, ValueError):
    pass


class MissingScoreError(RotsymError, KeyError):
    pass


class IdMismatchError(RotsymError, ValueError):
    pass


class ConfigError(RotsymError, ValueError):
    pass


class DegenerateError(RotsymError, ValueError):
    """Parameters too close to a precondition boundary for derivatives."""
