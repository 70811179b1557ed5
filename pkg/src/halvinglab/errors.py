"""Exception types shared across the package."""


class HalvingLabError(Exception):
    """Base class for all package errors."""


class ConfigError(HalvingLabError):
    """Invalid configuration: bad parameter values, inconsistent specs."""


class DataFormatError(HalvingLabError):
    """Malformed input data (CSV schema violations, ragged curves, ...)."""


class NumericalError(HalvingLabError):
    """Numerical failure (factorization breakdown, non-finite objective)."""

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail
