"""Exception types shared across the package.

The split matters for the command line tool, which maps data problems and
numerical failures to distinct exit codes.
"""


class GamsmoothError(Exception):
    """Base class for all package-specific errors."""


class DataError(GamsmoothError, ValueError):
    """Invalid input data or a model spec that does not match the data."""


class DegenerateCovariateError(DataError):
    """A covariate has too few distinct finite values to support its basis."""


class NumericalError(GamsmoothError, RuntimeError):
    """A numerical routine failed (non-convergence, singular system, ...)."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class PirlsDivergenceError(NumericalError):
    """The penalized IRLS loop failed to converge.

    ``trace`` holds the penalized-deviance value at each iterate so the
    failure can be diagnosed.
    """


class OptimizationError(NumericalError):
    """Smoothing-parameter optimization failed to produce a usable optimum."""
