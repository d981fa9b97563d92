class SmartcalError(Exception):
    """Base class for all package errors."""


class DataError(SmartcalError, ValueError):
    """Malformed, out-of-range or otherwise unusable input data."""


class NumericError(SmartcalError, ArithmeticError):
    """A computation produced a non-finite value or failed to converge."""
