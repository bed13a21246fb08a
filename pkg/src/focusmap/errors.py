"""Exception types shared across the package."""


class FocusError(Exception):
    """Base class for package errors."""


class ConfigError(FocusError, ValueError):
    """Invalid configuration or hyperparameter."""


class InputError(FocusError, ValueError):
    """Malformed or mismatched input data."""


class NumericError(FocusError, FloatingPointError):
    """Non-finite value encountered in a computation."""
