"""Exception types raised across the package."""


class SqtError(Exception):
    """Base class for all package errors."""


class DomainError(SqtError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class InfiniteWallError(DomainError):
    """Position inside an infinite wall of the square double well."""


class NoBarrierError(DomainError):
    """No classically forbidden barrier exists at the requested energy."""


class NoDoubletError(SqtError):
    """The square well has no sub-barrier doublet."""


class MatchingError(SqtError):
    """Piecewise wavefunction branches do not join continuously."""

    def __init__(self, message, jump=None):
        super().__init__(message)
        self.jump = jump


class BracketingError(SqtError):
    """Eigenvalue bracket could not be isolated by node counting."""


class GridTooSmallError(SqtError):
    """Wavefunction tails have not decayed at the grid edges."""


class NumericalFailure(SqtError):
    """Non-finite value produced during integration."""


class InsufficientDataError(SqtError):
    """Too few samples for the requested estimate."""


class ResolutionError(SqtError):
    """A discretized result did not converge under grid refinement."""


class FitFailure(SqtError):
    """Parameter fit did not reach its primary target."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConfigError(SqtError):
    """Malformed or unknown configuration entry."""


class UnitError(ConfigError):
    """Inconsistent unit declarations in a configuration."""


class OrderingError(DomainError):
    """Energy levels supplied in the wrong order."""


class StageError(SqtError):
    """Failure inside one stage of a multi-stage pipeline."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
