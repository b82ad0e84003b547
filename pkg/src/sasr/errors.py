"""Exception hierarchy shared by the library and the command line tool.

The split mirrors the CLI exit codes: configuration problems (bad flags,
bad config files, incompatible checkpoints) exit 1, malformed or
inconsistent input data exits 2, numerical failures exit 3.
"""


class SasrError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SasrError):
    """Invalid configuration: unknown keys, out-of-range values, bad flags."""


class DataError(SasrError):
    """Input data is structurally valid but inconsistent with the request."""


class FormatError(DataError):
    """A file does not parse as the format it is supposed to be."""


class NumericalError(SasrError):
    """A computation lost its numerical footing (rank deficiency, NaN, ...)."""
