"""Exception types shared across the package."""


class PlausError(Exception):
    """Base class for all package errors."""


class ParameterError(PlausError):
    """A parameter vector does not match the model it is used with."""


class DesignError(PlausError):
    """A design matrix is unusable (rank deficient, empty, wrong shape)."""


class NumericDomainError(PlausError):
    """A quantity left its numeric domain (log of zero, variance zero)."""


class DataError(PlausError):
    """Input data violates a documented contract (CSV schema, formula)."""


class EnumerationCapError(PlausError):
    """Exact enumeration would exceed the configured term cap.

    Callers should fall back to the Monte Carlo backend.
    """


class ConvergenceError(PlausError):
    """An iterative solver failed to converge where failure is fatal."""
