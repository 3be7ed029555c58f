"""Exception types shared across the package."""


class UdaAlignError(Exception):
    """Base class for all package errors."""


class ConfigError(UdaAlignError, ValueError):
    """Invalid configuration or dataset specification."""


class DataError(UdaAlignError):
    """Malformed or inconsistent data on disk."""


class UsageError(UdaAlignError, RuntimeError):
    """API called in the wrong order (e.g. backward before forward)."""


class NumericError(UdaAlignError, FloatingPointError):
    """A loss or gradient became non-finite during training."""

    def __init__(self, message, component=None, diagnostics=None):
        super().__init__(message)
        self.component = component
        self.diagnostics = diagnostics or {}
