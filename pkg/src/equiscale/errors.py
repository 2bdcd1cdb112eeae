"""Exception types shared across the package.

Each maps to a distinct CLI exit code (see ``equiscale.cli``).
"""


class EquiscaleError(Exception):
    """Base class for package errors."""


class DataFormatError(EquiscaleError):
    """A dataset record or input file violates its declared schema."""


class NormalizationError(EquiscaleError):
    """A vector expected to be unit-norm (or a scale expected positive) is not."""


class ConfigError(EquiscaleError):
    """A model or run configuration is internally inconsistent."""


class FitError(EquiscaleError):
    """A fit is non-identifiable or failed to converge."""


class DivergenceError(EquiscaleError):
    """Training produced a non-finite or exploding loss."""
