"""Exceptions raised by the allocation engine."""


class AllocationError(Exception):
    """Base class for every error raised by the services package."""


class ShapeError(AllocationError, ValueError):
    """Operand shapes do not fit the operation."""


class TapeError(AllocationError):
    """Gradient requested from a tape that did not record the value."""


class NonFiniteError(AllocationError, ArithmeticError):
    """A NaN or infinite value appeared where finite data is required."""


class NonFiniteLossError(NonFiniteError):
    """Training loss became non-finite; carries the offending record."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class CheckpointError(AllocationError):
    """Checkpoint cannot be written, read, or does not match the model."""


class ConfigError(AllocationError, ValueError):
    """Configuration file or override is invalid."""


class InvalidParametersError(AllocationError, ValueError):
    """Policy parameters are outside their valid domain."""
