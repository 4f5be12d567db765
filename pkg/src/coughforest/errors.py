"""Exception hierarchy.

Everything raised on purpose by the toolkit derives from ``CoughForestError``.
``ConfigurationError`` is special-cased by the CLI (exit code 2).
"""


class CoughForestError(Exception):
    """Base class for toolkit errors."""


class ConfigurationError(CoughForestError, ValueError):
    """Invalid arguments, settings, or strategy flags."""


class DecodeError(CoughForestError):
    """Malformed audio container."""


class UnsupportedFormatError(DecodeError):
    """Well-formed container with an unsupported codec or layout."""


class EmptyAudioError(CoughForestError, ValueError):
    """Audio payload with no samples."""


class InvalidSignalError(CoughForestError, ValueError):
    """Non-finite samples or feature values."""


class ManifestError(CoughForestError, ValueError):
    """Manifest parse failure; carries the offending row number when known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class IntegrityError(CoughForestError, ValueError):
    """Duplicate identifiers or train/test leakage."""


class ExtractionError(CoughForestError):
    """One or more records failed feature extraction.

    ``failures`` maps each failing path to its error message.
    """

    def __init__(self, failures):
        self.failures = dict(failures)
        lines = [f"  {path}: {msg}" for path, msg in self.failures.items()]
        super().__init__(
            f"{len(self.failures)} record(s) failed extraction:\n" + "\n".join(lines)
        )


class DegenerateTargetError(CoughForestError, ValueError):
    """Labels contain a single class where two are required."""


class StratificationError(CoughForestError, ValueError):
    """A class has fewer members than the requested fold count."""


class NotFittedError(CoughForestError, RuntimeError):
    """Model used before fitting."""


class InsufficientMinorityError(CoughForestError, ValueError):
    """Minority class too small for the requested neighbour count."""


class NumericError(CoughForestError, ArithmeticError):
    """Numerical failure (e.g. kernel matrix not positive definite)."""
