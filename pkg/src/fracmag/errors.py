"""Exception and warning classes shared across the package."""


class SpecViolation(ValueError):
    """Geometry or configuration violates a stated precondition."""


class DomainError(ValueError):
    """A scalar parameter lies outside its admissible range."""


class NumericalFailure(RuntimeError):
    """Base class for failures of a numerical routine."""


class NumericalOverflow(NumericalFailure):
    pass


class SingularSystem(NumericalFailure):
    pass


class BarrierFailure(NumericalFailure):
    pass


class ContractionFailure(NumericalFailure):
    """Picard iteration did not contract (exterior data too large)."""

    def __init__(self, message, suggested_amplitude=None):
        super().__init__(message)
        self.suggested_amplitude = suggested_amplitude


class RadiusExceeded(ContractionFailure):
    """A field left the validity radius of the truncated nonlinearity."""


class StencilTooCoarse(NumericalFailure):
    pass


class PositivityFailure(NumericalFailure):
    pass


class BasisMismatch(ValueError):
    pass


class IllConditionedWarning(UserWarning):
    pass


class AccuracyWarning(UserWarning):
    pass
