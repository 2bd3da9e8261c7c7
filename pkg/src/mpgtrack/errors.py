"""Exception hierarchy shared by all modules."""


class MpgTrackError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(MpgTrackError, ValueError):
    pass


class InvalidTreeError(InvalidInputError):
    pass


class InvalidRotationError(InvalidInputError):
    pass


class BehindCameraError(MpgTrackError):
    """A point lies at or behind the camera plane.

    ``indices`` lists the offending point indices (or frame indices when raised
    while synthesizing a whole sequence).
    """

    def __init__(self, indices, message=None):
        self.indices = [int(i) for i in indices]
        super().__init__(message or f"points behind camera: {self.indices}")


class InsufficientObservationsError(MpgTrackError):
    pass


class DegenerateGeometryError(MpgTrackError):
    pass


class EmptySceneError(MpgTrackError):
    pass


class InsufficientFramesError(InvalidInputError):
    pass


class PlacementFailureError(MpgTrackError):
    pass


class ParseError(InvalidInputError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(InvalidInputError):
    pass


class ConfigError(InvalidInputError):
    pass


class DivergedStateError(MpgTrackError):
    pass
