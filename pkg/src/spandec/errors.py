"""Exception types shared across the package."""


class SpandecError(Exception):
    """Base class for package errors."""


class ConfigError(SpandecError):
    """Invalid configuration value or combination."""


class CorpusFormatError(SpandecError):
    """Malformed corpus file (carries a line number where possible)."""


class TagValidationError(SpandecError):
    """A tag outside the active label set."""


class ShapeError(SpandecError):
    """Array arguments with inconsistent shapes."""


class TrainingDiverged(SpandecError):
    """Loss became non-finite during optimization."""
