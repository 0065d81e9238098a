"""Error types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class SpeckleLabError(Exception):
    """Base class for all package errors."""


class ConfigError(SpeckleLabError):
    """Invalid configuration or incompatible parameter combination."""


class DataError(SpeckleLabError):
    """Missing, empty, or malformed data."""


class NumericError(SpeckleLabError):
    """Numerical failure such as a non-finite loss."""
