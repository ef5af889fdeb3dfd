"""Exception types shared across the package."""


class ActtopoError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ActtopoError):
    """A network/layer specification is internally inconsistent."""


class UsageError(ActtopoError):
    """An operation was called with invalid arguments."""


class FormatError(ActtopoError):
    """A file on disk is not in the expected format."""


class ConsistencyError(ActtopoError):
    """Two artifacts that must agree (counts, shapes, ids) do not."""


class NumericError(ActtopoError):
    """A computation produced non-finite values."""


class ValidationError(ActtopoError):
    """A cross-check (e.g. edge-sum vs forward pass) exceeded tolerance."""
