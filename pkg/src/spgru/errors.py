"""Exception types shared across the package."""


class SpgruError(Exception):
    """Base class for all package errors."""


class DomainError(SpgruError):
    """A parameter value violates its distribution-family domain."""


class ShapeError(SpgruError):
    """Array shapes do not conform."""


class ConfigError(SpgruError):
    """Invalid or unknown configuration."""


class FormatError(SpgruError):
    """A binary file does not match its documented layout."""


class NonFiniteError(SpgruError):
    """A NaN or Inf appeared where finite values are required."""


class NonScalarLossError(SpgruError):
    """backward() was called on a non-scalar value."""


class OracleFailure(SpgruError):
    """A Monte Carlo / analytic verification check failed."""
