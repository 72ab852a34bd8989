"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies instead of bare ValueError.
"""


class HotgridError(Exception):
    """Base class for all errors raised by this package."""


class DataError(HotgridError):
    """Malformed or out-of-range input data (files, records, coordinates)."""


class ConfigError(DataError):
    """Inputs are well-formed but the requested configuration cannot work.

    Example: asking for more time windows than the dataset can cover.
    """


class NumericError(HotgridError):
    """Numeric failure during training or inference (NaN/Inf, divergence)."""


class ShapeError(NumericError):
    """Tensor shapes are incompatible with the requested operation."""
