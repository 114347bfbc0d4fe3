"""Exception hierarchy shared by all modules.

The CLI maps the three top-level families onto exit codes:
:class:`ConfigError` -> 2, :class:`DataError` -> 3, :class:`NumericalError` -> 4.
"""


class MrisegError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MrisegError):
    """Invalid or incomplete configuration, detected before any compute."""


class DataError(MrisegError):
    """Input data that cannot be processed as given."""


class NumericalError(MrisegError):
    """A computation reached a numerically invalid state."""


class MalformedHeader(DataError):
    pass


class UnsupportedDatatype(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class IoFailure(DataError):
    pass


class GeometryMismatch(DataError):
    pass


class ClassCountMismatch(DataError):
    pass


class OutOfBounds(DataError):
    pass


class DegenerateInput(DataError):
    pass


class SpecInvalid(ConfigError):
    pass


class SingularTransform(NumericalError):
    pass


class ObjectiveDecreased(NumericalError):
    """Raised by the optional in-loop ICM monotonicity check."""
