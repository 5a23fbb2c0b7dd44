"""Exception types shared across the toolkit.

The command line maps these onto exit codes: configuration problems exit
with 2, data and file-format problems with 3, numeric failures with 4.
"""


class DoasepError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(DoasepError):
    """A parameter, option, or config entry has an unusable value."""


class GeometryError(ConfigurationError):
    """A scene or array layout is geometrically impossible."""


class DataError(DoasepError):
    """Input data is inconsistent with what an operation requires."""


class FormatError(DataError):
    """A file's byte content is malformed; messages name the offset."""


class NumericError(DoasepError):
    """Non-finite values appeared or a subproblem could not be solved."""
