class RotLabError(Exception):
    """Base class for all errors raised by rotlab."""


class DimensionError(RotLabError, ValueError):
    pass


class ValidationError(RotLabError, ValueError):
    pass


class NotPSDError(ValidationError):
    pass


class ImpossibleOutcomeError(RotLabError):
    """A Kraus operator was applied to a state on which its outcome has zero probability."""


class EngineFault(RotLabError, RuntimeError):
    """A strategy broke the protocol order. Distinct from an in-protocol abort."""
