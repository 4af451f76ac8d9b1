"""Exception hierarchy.

Every error raised on purpose by the package derives from ``SvyAdjustError`` so
callers (and the CLI, which maps them to exit codes) can catch them in one place.
"""


class SvyAdjustError(Exception):
    """Base class for all package errors."""


class DimensionError(SvyAdjustError, ValueError):
    """Parameter or matrix shapes do not match the dataset."""


class DataError(SvyAdjustError, ValueError):
    """Malformed input data.

    ``line`` carries the 1-based line number for file parse failures.
    """

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class NonFiniteError(SvyAdjustError, FloatingPointError):
    """A computed quantity is NaN or infinite.

    ``term`` names the offending piece (e.g. ``"likelihood"``, ``"hessian[3]"``).
    """

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class ConvergenceError(SvyAdjustError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, best=None, grad_norm=None):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm


class SamplerDivergence(SvyAdjustError, RuntimeError):
    """The log-density evaluated to NaN during sampling."""

    def __init__(self, message, iteration=None, state=None):
        super().__init__(message)
        self.iteration = iteration
        self.state = state


class ConditioningError(SvyAdjustError, ValueError):
    """A matrix is too far from positive semidefinite to be repaired."""

    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class DomainError(SvyAdjustError, ValueError):
    """A value lies outside the domain of a transform."""


class DesignError(SvyAdjustError, ValueError):
    """A replicate design cannot be built for the given PSU structure."""
