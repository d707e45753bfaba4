"""Exception types shared across the package."""


class StreamExhaustedError(RuntimeError):
    """A fixed-sequence uniform stream ran out of values."""


class LevelRangeError(ValueError):
    """A quantile level is outside the range an approximation can serve."""


class UnsupportedModelError(ValueError):
    """The requested operation does not apply to this model kind."""


class RecursionInstabilityError(RuntimeError):
    """The discrete recursion denominator 1 - a*f0 is not positive."""


class TruncationError(RuntimeError):
    """Accumulated probability mass is insufficient for the requested level.

    Callers should enlarge the support (raise M, widen the interval) and
    retry.
    """


class ProposalSupportError(RuntimeError):
    """A path proposal left the admissible strictly-decreasing support."""


class SupportViolationError(RuntimeError):
    """Proposal density is zero somewhere the kernel is not."""


class EmptyTailError(RuntimeError):
    """No particle mass beyond the requested quantile."""


class ExtinctionError(RuntimeError):
    """Every particle died at one selection level.

    Attributes
    ----------
    level : int
        Index of the level at which the population went extinct.
    """

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


class InvalidTargetError(ValueError):
    """Claimed invariant measure is not invariant for the kernel."""


class DominationViolationError(RuntimeError):
    """Importance ratio non-finite on a sampled point inside the event."""


class NumericError(RuntimeError):
    """A quadrature or root solve failed to reach its tolerance.

    Attributes
    ----------
    achieved : float or None
        Error estimate actually achieved, when available.
    """

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class StuckKernelWarning(UserWarning):
    """Restricted MH chain rejected every proposal for a long stretch."""
