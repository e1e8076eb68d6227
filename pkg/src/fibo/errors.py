"""Exception hierarchy shared by every solver component."""


class FiboError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(FiboError, ValueError):
    pass


class EvalBudgetExceeded(FiboError):
    """Raised when an objective evaluation is requested past the configured cap."""


class UnknownProblem(FiboError, KeyError):
    pass


class InvalidRadius(FiboError, ValueError):
    pass


class SingularSystem(FiboError):
    """The interpolation system is numerically rank deficient."""


class DuplicatePoint(FiboError, ValueError):
    pass


class NoProgress(FiboError):
    """The trust-region subproblem returned a step violating its contract."""


class Infeasible(FiboError):
    """No point satisfying the constraints could be found."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class CallbackFailure(FiboError):
    """A user callback raised or returned non-finite values."""


class MismatchedProblem(FiboError, ValueError):
    pass
