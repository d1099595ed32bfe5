"""Exception and warning types shared across the package."""


class CarpetError(Exception):
    """Base class for all package errors."""


class DomainError(CarpetError, ValueError):
    """An argument lies outside the domain of an operation."""


class ValidationError(CarpetError, ValueError):
    """Input data failed a consistency check (orthonormality, config fields)."""

    def __init__(self, message, fields=None):
        super().__init__(message)
        self.fields = dict(fields or {})


class NumericError(CarpetError, RuntimeError):
    """An iterative numerical procedure failed to converge."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ResourceError(CarpetError, RuntimeError):
    """A configured resource cap (e.g. state enumeration) was exceeded."""


class PropagationDiverged(NumericError):
    """Non-finite amplitudes appeared during time stepping."""

    def __init__(self, message, last_stable_time, partial=None):
        super().__init__(message, best=partial)
        self.last_stable_time = last_stable_time
        self.partial = partial


class NotEquilibratedError(NumericError):
    """A coherence trace has no plateau in its final samples."""

    def __init__(self, message, trace=None):
        super().__init__(message, best=trace)
        self.trace = trace


class InsufficientDataError(CarpetError, ValueError):
    """Too few samples for a statistic."""


class TruncationWarning(UserWarning):
    """Mode-basis truncation defect exceeds the requested tolerance."""


class PoorFitWarning(UserWarning):
    """A fitted model leaves a large residual."""


class StabilityWarning(UserWarning):
    """Time step is large compared with the fastest resolved mode."""


class CoverageWarning(UserWarning):
    """A path integral skipped a sizeable fraction of masked points."""
