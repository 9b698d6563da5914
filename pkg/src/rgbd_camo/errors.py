"""Exception hierarchy shared by every module."""


class CamoError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(CamoError, ValueError):
    pass


class DegeneratePointError(GeometryError):
    pass


class OutOfRangeError(GeometryError):
    pass


class BehindCameraError(GeometryError):
    pass


class OutOfViewError(GeometryError):
    pass


class SceneError(CamoError, ValueError):
    pass


class RayMissError(SceneError):
    """A ray (typically a corner shadow ray) left the scene without a hit."""


class UndefinedCloudPointError(CamoError):
    """The cloud has no defined point where one was required."""


class DataError(CamoError, ValueError):
    """Degenerate training data: zero variance, too few instances, bad shapes."""


class DegenerateQuadError(GeometryError):
    pass


class FormatError(CamoError, ValueError):
    """A file could not be parsed into the expected structure."""
