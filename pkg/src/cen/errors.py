"""Exception types shared across the package."""


class CenError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(CenError):
    """Invalid, incomplete, or contradictory run configuration."""


class DataError(CenError):
    """Malformed dataset file (ragged rows, non-numeric cells, empty file)."""


class DivergenceError(CenError):
    """Training produced a non-finite loss or gradient."""
