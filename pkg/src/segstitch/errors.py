"""Exception hierarchy shared across the package."""


class SegstitchError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(SegstitchError, ValueError):
    """An argument violates a documented precondition."""


class DimensionError(SegstitchError, ValueError):
    """Array shapes are inconsistent with each other or with a grid."""


class NumericalError(SegstitchError, ArithmeticError):
    """A numerical routine failed beyond recoverable jitter."""


class ConfigError(SegstitchError, ValueError):
    """A run configuration failed schema validation."""
