"""Exception types shared across the package."""


class PrivexpError(Exception):
    """Base class for all package errors."""


class DomainError(PrivexpError, ValueError):
    """A parameter or dual value lies outside the domain of a function."""


class SupportError(PrivexpError, ValueError):
    """A data value lies outside the support of its family."""


class InvalidStatsError(PrivexpError, ValueError):
    """Sufficient statistics induce a non-positive posterior parameter."""


class DegenerateIntervalError(PrivexpError, ValueError):
    """A truncation interval carries (numerically) zero probability mass."""


class UnsupportedOperationError(PrivexpError, TypeError):
    """The operation is not defined for this family."""


class MustTruncateError(PrivexpError, ValueError):
    """The family has unbounded statistics; a release needs truncation bounds."""


class ConfigError(PrivexpError, ValueError):
    """An experiment, prior or data file is malformed."""
