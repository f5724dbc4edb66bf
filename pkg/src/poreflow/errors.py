"""Exception types shared across the package."""


class PoreflowError(Exception):
    """Base class for all package errors."""


class DomainError(PoreflowError):
    """A point or index lies outside the valid domain."""


class ShapeError(PoreflowError):
    """Operand shapes or grid dimensions do not match."""


class InputError(PoreflowError):
    """Input data violates a precondition."""


class InsufficientDataError(InputError):
    """Not enough samples/frames to run the operation."""


class DegenerateInputError(InputError):
    """Input is formally valid but degenerate (e.g. uniform mask, zero variance)."""


class ConfigError(PoreflowError):
    """Invalid configuration value or missing required configuration."""


class GenerationError(PoreflowError):
    """Synthetic data generation could not satisfy its constraints."""
