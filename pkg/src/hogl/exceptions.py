"""Exception hierarchy for the hogl package."""


class HOGLError(Exception):
    """Base class for all errors raised by hogl."""


class DimensionMismatchError(HOGLError, ValueError):
    pass


class InvalidDimensionError(HOGLError, ValueError):
    pass


class ZeroColumnError(HOGLError, ValueError):
    """A column is constant, so it cannot be centered and scaled to unit norm."""


class NotPositiveDefiniteError(HOGLError, ValueError):
    pass


class RankDeficientError(HOGLError, ValueError):
    pass


class SingularSError(NotPositiveDefiniteError):
    """The residual covariance estimate is not positive definite."""


class ZeroSignalError(HOGLError, ValueError):
    pass


class DfTooLargeError(HOGLError, ValueError):
    pass


class ConvergenceWarning(UserWarning):
    """Emitted when an iterative solver stops at ``max_iter``."""
