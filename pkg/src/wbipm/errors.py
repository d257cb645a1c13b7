"""Exception types shared across the package.

The CLI maps ValidationError to exit code 2 and NumericalError to exit
code 3; everything else is a bug.
"""


class WbipmError(Exception):
    """Base class for all package errors."""


class ValidationError(WbipmError):
    """Bad input: shapes, ranges, config keys, file contents."""


class NumericalError(WbipmError):
    """A numerical operation failed (singular system, violated bound, ...)."""


class AfgkBreakdown(WbipmError):
    """Happy breakdown of the basis recurrence: the new direction vanished.

    Callers treat this as "the basis already spans the reachable space",
    not as a failure.
    """


class RankDeficientUpdate(WbipmError):
    """qr_append received a column (numerically) inside the current range."""
