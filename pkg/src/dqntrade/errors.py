"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
bad input data with 3, anything else with 4.
"""


class DqnTradeError(Exception):
    """Base class for all package errors."""


class ConfigError(DqnTradeError, ValueError):
    """Invalid parameters, configuration keys or experiment setup."""


class ParameterError(ConfigError):
    """A model parameter violates its domain (e.g. non-positive gamma shape)."""


class DataError(DqnTradeError, ValueError):
    """Malformed, non-finite or insufficient input data."""


class InsufficientDataError(DataError):
    pass


class CalibrationError(DataError):
    """Method-of-moments calibration has no admissible solution.

    ``moments`` carries the raw sample moments so callers can inspect them.
    """

    def __init__(self, message, moments=None):
        super().__init__(message)
        self.moments = dict(moments or {})


class AlignmentError(DataError):
    pass
