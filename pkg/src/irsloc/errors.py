"""Exception types shared across the package."""


class IrsLocError(Exception):
    """Base class for all package errors."""


class DegenerateSpan(IrsLocError):
    """A BS lies inside a target's uncertainty disk, so its angular span wraps."""


class InfiniteVariance(IrsLocError):
    """A link with zero SNR has no usable range measurement."""


class DegenerateGeometry(IrsLocError):
    """All measurement directions are parallel; the FIM is singular."""


class AllZeroAllocation(IrsLocError):
    """Every time share is zero."""


class InvalidGeometry(IrsLocError):
    pass


class NonMonotoneObjective(IrsLocError):
    """The objective failed a coordinate-wise monotonicity probe."""


class MaxIterExceeded(RuntimeWarning):
    """Polyblock stopped at the iteration cap before reaching the tolerance."""


class InfeasiblePlan(IrsLocError):
    pass


class DimensionTooLarge(IrsLocError):
    pass


class NoFeasiblePair(IrsLocError):
    pass


class ParseError(IrsLocError):
    pass


class ValidationError(IrsLocError):
    """Invalid scenario field. ``path`` is the dotted location of the field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message
