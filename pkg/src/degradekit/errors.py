"""Exception taxonomy shared across the toolkit.

Plain I/O failures stay as builtin OSError subclasses; everything the
pipeline itself can reject gets a typed exception so callers (and the CLI
exit-code mapping) can tell user error, bad data, and backend trouble apart.
"""


class DegradeKitError(Exception):
    """Base class for all toolkit-specific errors."""


class ParameterError(DegradeKitError, ValueError):
    """An argument is outside its documented range or combination."""


class ShapeError(DegradeKitError, ValueError):
    """Array dimensions do not match what the operation requires."""


class FormatError(DegradeKitError):
    """A file exists and is readable but is not in a supported format."""


class BankError(DegradeKitError):
    """A pattern bank directory yielded no usable entries."""


class ConfigError(DegradeKitError):
    """A configuration value is missing or inconsistent."""


class BackendError(DegradeKitError):
    """An external scoring/embedding backend failed or lacks an entry."""


class UnsupportedTaskError(DegradeKitError):
    """The requested task is outside the operation's declared coverage."""


class UndefinedCorrelationError(DegradeKitError):
    """A correlation coefficient is undefined (zero-variance input)."""
