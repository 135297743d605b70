"""Shared exception types."""


class SchemaError(ValueError):
    """Raised when an input file does not match the declared schema."""


class NumericalError(RuntimeError):
    """Raised when a numerical routine produces an unusable result
    (non-finite scores, non-positive update denominators, diverged factors)."""


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configuration."""
