"""Error types raised across the package."""


class ProbDGError(Exception):
    """Base class for all package errors."""


class MalformedHeader(ProbDGError):
    pass


class DTypeUnsupported(ProbDGError):
    pass


class TruncatedPayload(ProbDGError):
    pass


class ShapeMismatch(ProbDGError, ValueError):
    pass


class ZeroTargetDim(ProbDGError, ValueError):
    pass


class ClassIndexOutOfRange(ProbDGError, ValueError):
    pass


class NoUsableNegatives(ProbDGError):
    pass


class EmptyPositive(ProbDGError):
    pass


class AllPixelsUnusable(ProbDGError):
    pass


class DegenerateSpatial(ProbDGError, ValueError):
    pass


class ZeroSpatialDim(ProbDGError, ValueError):
    pass


class EmptyDomainList(ProbDGError, ValueError):
    pass


class NonFiniteLoss(ProbDGError, FloatingPointError):
    pass


class ConfigError(ProbDGError, ValueError):
    pass
