"""Error taxonomy shared across the package.

The split mirrors the exit-code contract of the command line tool:
usage/config problems exit 2, numerical non-convergence exits 3, and a
failed verification check exits 1 without raising at all.
"""


class FracpError(Exception):
    """Base class for all package-specific errors."""


class DomainError(FracpError, ValueError):
    """An argument lies outside the mathematically admissible range."""


class UsageError(FracpError, ValueError):
    """Operands are individually valid but mutually inconsistent.

    Typical case: a RadialFunction evaluated against a KernelMatrix that
    was assembled on a different grid.
    """


class ConfigError(FracpError, ValueError):
    """A run configuration file could not be parsed or validated."""


class ConvergenceError(FracpError, RuntimeError):
    """An iterative procedure failed to reach its tolerance.

    Carries the best available estimate so callers can decide whether to
    degrade gracefully instead of aborting.
    """

    def __init__(self, message, best=None, estimate=None):
        super().__init__(message)
        self.best = best
        self.estimate = estimate
