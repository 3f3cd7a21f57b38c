"""Exception types shared across the library.

Every error raised on a contract violation derives from FedInitError so the
command-line layer can catch one type and emit a single-line diagnostic.
"""


class FedInitError(Exception):
    """Base class for all errors raised by this package."""


class DataFormatError(FedInitError):
    """A binary file is malformed: bad magic, bad version, truncation, bad dims."""


class ConfigError(FedInitError):
    """An experiment configuration is invalid or contains unknown keys."""


class InsufficientMeansError(FedInitError):
    """A class received fewer than two means, so its covariance is undefined."""


class SolveError(FedInitError):
    """A linear system could not be solved under the requested settings."""
