"""Exception hierarchy.

Geometric failures subclass ``GeometryError`` so callers (and the CLI exit-code
mapping) can catch them as a group.
"""


class EchoRoomError(Exception):
    pass


class GeometryError(EchoRoomError, ValueError):
    """An input violates a geometric invariant."""


class NotCoplanarError(GeometryError):
    pass


class DegeneratePolygonError(GeometryError):
    pass


class NonConvexError(GeometryError):
    pass


class CoplanarMicrophonesError(GeometryError):
    pass


class SingularKnownMatrixError(GeometryError):
    pass


class NegativeEigenvalueError(GeometryError):
    pass


class SourceOnWallError(GeometryError):
    pass


class MicOnMirrorPlaneError(GeometryError):
    pass


class DegenerateSourceError(GeometryError):
    pass


class AllZeroInputError(GeometryError):
    pass


class NegativeDelayError(EchoRoomError, ValueError):
    pass


class MissingLoudspeakerError(EchoRoomError):
    """The loudspeaker position cannot be resolved."""
