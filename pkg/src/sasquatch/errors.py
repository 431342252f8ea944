"""Exception types shared across the package."""


class SasquatchError(Exception):
    """Base class for all package errors."""


class CapacityError(SasquatchError, ValueError):
    """A register, circuit or oracle exceeds the supported size."""


class StructuralError(SasquatchError, ValueError):
    """Shapes, indices or arguments are inconsistent."""


class DegenerateInputError(SasquatchError, ValueError):
    """Input cannot be encoded (e.g. a zero-norm amplitude token)."""


class FormatError(SasquatchError, ValueError):
    """A file or checkpoint does not follow the expected format."""


class NumericalConsistencyError(SasquatchError, ArithmeticError):
    """A result that must be real (or finite) is not, beyond tolerance."""
