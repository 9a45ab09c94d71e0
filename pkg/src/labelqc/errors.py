"""Exception types shared across the package.

The CLI maps these onto exit codes (DataError -> 3, NumericError -> 4),
so stages should raise the most specific one that applies.
"""


class DataError(ValueError):
    """Malformed, missing, or out-of-contract input data."""


class NumericError(RuntimeError):
    """Numerical failure during optimization or inference (NaN, divergence)."""
