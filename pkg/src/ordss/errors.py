"""Exception hierarchy for the ordss package."""


class OrdssError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(OrdssError, ValueError):
    """Malformed or out-of-contract input (bad shapes, ranges, config keys)."""


class StationarityError(OrdssError):
    """The transition matrix does not admit a stationary state distribution."""


class IdentificationError(OrdssError):
    """The unit-variance identification system could not be solved."""


class InfeasibleDynamicsError(IdentificationError):
    """Identification solved but produced a non-positive innovation variance."""


class FilterDegeneracyError(OrdssError):
    """All particle weights underflowed at some timepoint."""

    def __init__(self, timepoint: int, message: str | None = None):
        self.timepoint = timepoint
        super().__init__(message or f"all particle weights underflowed at t={timepoint}")


class EstimationFailureError(OrdssError):
    """An estimation run could not be completed (e.g. persistent infeasibility)."""


class UndefinedCorrelationError(OrdssError):
    """Correlation requested for a constant vector."""
