"""Error taxonomy shared across the package.

Validation errors (bad inputs, violated preconditions) map to CLI exit
code 2; numerical failures (blow-up, non-convergence) map to exit code 3.
"""


class KclError(Exception):
    """Base class for all package errors."""


class ValidationError(KclError):
    """Bad configuration, shapes, or violated preconditions. Exit code 2."""


class NumericalError(KclError):
    """A computation failed numerically. Exit code 3."""


class BlowUpError(NumericalError):
    """A trajectory left the sane range (|state| > threshold)."""


class ConvergenceError(NumericalError):
    """An iterative scheme did not reach its tolerance."""
