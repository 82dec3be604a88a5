"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code (see cli.EXIT_CODES) so batch callers
can distinguish usage mistakes, bad data, numeric blow-ups, and I/O damage.
"""


class CasReaderError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(CasReaderError):
    """A call was made with degenerate or out-of-order arguments."""


class ConfigurationError(CasReaderError):
    """Inconsistent configuration, e.g. checkpoint/vocabulary mismatch."""


class DimensionError(CasReaderError):
    """Tensor or matrix shapes do not agree."""


class EmptySupportError(CasReaderError):
    """A softmax was requested over a fully masked vector."""


class NumericError(CasReaderError):
    """A non-finite value appeared where a finite one is required."""


class ValidationError(CasReaderError):
    """A data record violates the sample invariants."""


class ParseError(CasReaderError):
    """A text file does not follow its declared format."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CorruptionError(CasReaderError):
    """A binary artifact is truncated or inconsistent with its manifest."""
