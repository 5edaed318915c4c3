"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class UsageError(ValueError):
    """Bad flags, bad config values, or an invalid invocation."""


class DataError(ValueError):
    """Unreadable/malformed input data (files, corpora, gold annotations)."""


class NumericError(RuntimeError):
    """A numeric invariant was violated (NaN/Inf, divergence, shape clash)."""
