"""Exception types shared across the package."""


class QrffError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(QrffError, ValueError):
    """A parameter violates its documented domain (rates, thresholds, lengths...)."""


class DegenerateVarianceError(QrffError, ValueError):
    """Sample variance is zero, so a normalized statistic is undefined."""


class FitFailureError(QrffError, RuntimeError):
    """A baseline/decay fit could not be performed (e.g. empty tail bins)."""


class NoBracketError(QrffError, RuntimeError):
    """Calibration could not bracket a sign change of the measured bias."""


class BitFileError(QrffError, ValueError):
    """A bit file is malformed: bad magic, truncated payload, or length mismatch."""


class ConfigError(QrffError, ValueError):
    """A run configuration failed schema validation; message carries the key path."""
