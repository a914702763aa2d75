"""Exception hierarchy shared by all mdyn modules."""


class MdynError(Exception):
    """Base class for every error raised by this package."""


class PrecisionExhausted(MdynError):
    """The maximum working precision was reached without certifying a result."""

    def __init__(self, message, bits=None, reached=None):
        super().__init__(message)
        self.bits = bits
        self.reached = reached


class NeedsPrecision(MdynError):
    """Internal signal: the current precision cannot decide a comparison."""


class NotDifferentiable(MdynError):
    pass


class NotSmooth(MdynError):
    pass


class AtCriticalPoint(MdynError):
    pass


class RootIsolationFailure(MdynError):
    pass


class NotInvertible(MdynError):
    pass


class BoundaryViolation(MdynError):
    """Map violates the boundary policy (critical orbit reaches a non-fixed boundary point)."""


class MapDefinitionError(MdynError):
    pass


class UncertainPrefix(MdynError):
    """An uncertain symbol precedes the first disagreement of two itineraries."""

    def __init__(self, index):
        super().__init__(f"uncertain symbol at index {index}")
        self.index = index


class CalibrationFailure(MdynError):
    pass


class TruncatedByCriticalHit(MdynError):
    def __init__(self, depth):
        super().__init__(f"orbit lands on the critical set at iterate {depth}")
        self.depth = depth


class InsufficientHorizon(MdynError):
    pass
