"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems -> 2,
data problems -> 3, numerical failures -> 4.
"""


class FwersimError(Exception):
    """Base class for all errors raised by this package."""


class DesignError(FwersimError):
    """Invalid trial design or a reference to an unknown population."""


class ConfigError(FwersimError):
    """Malformed configuration, design file, or command arguments."""


class DataError(FwersimError):
    """Dataset ingestion failure (bad header, unknown labels, bad values)."""


class DegenerateSampleError(FwersimError):
    """A cell is too small for the requested statistic (empty, or < 2 obs)."""


class InsufficientDataError(FwersimError):
    """Not enough observations for a variance estimate (N <= number of cells)."""


class NumericError(FwersimError):
    """Numerical routine failed (non-PSD matrix, bracketing failure, ...)."""
