"""Exception hierarchy shared by all modules."""


class ReservingError(ValueError):
    """Base class for every error raised by gee_reserve."""


# triangle
class RaggedShape(ReservingError):
    """Observed cells do not form the upper-left run-off triangle."""


class DuplicateCell(ReservingError):
    pass


class NonNumericValue(ReservingError):
    pass


class WrongKind(ReservingError):
    """Operation needs an incremental (or cumulative) triangle and got the other."""


# model
class IndexOutOfRange(ReservingError, IndexError):
    pass


# correlation
class NotPositiveDefinite(ReservingError):
    pass


class NonPositiveMean(ReservingError):
    pass


class DegenerateFit(ReservingError):
    pass


class InsufficientPairs(ReservingError):
    """Too few within-cluster residual pairs to estimate a correlation parameter."""


# gee
class SingularWorkingCovariance(ReservingError):
    pass


class SingularB(ReservingError):
    """The information matrix sum(D' V^-1 D) is singular or too ill-conditioned."""


class DivergedFit(ReservingError):
    pass


# selection
class MismatchedModels(ReservingError):
    pass


# prediction
class NotConverged(ReservingError):
    pass


class UnsupportedStructureForPrediction(ReservingError):
    pass


class DimensionMismatch(ReservingError):
    pass


class ReservingWarning(UserWarning):
    """Non-fatal condition worth surfacing in reports (degenerate moments, negative MSE, ...)."""
