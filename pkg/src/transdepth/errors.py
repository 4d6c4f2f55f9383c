"""Exception types raised across the package."""


class TransDepthError(Exception):
    """Base class for all package errors."""


class DimensionError(TransDepthError, ValueError):
    """Shapes are incompatible with an operation's contract."""


class DomainError(TransDepthError, ValueError):
    """An input lies outside the domain of an operation (e.g. log of a non-positive value)."""


class NonFiniteError(DomainError):
    """An operation produced NaN or Inf."""


class ConfigError(TransDepthError, ValueError):
    """Invalid or inconsistent configuration."""


class IngestionError(TransDepthError):
    """A dataset directory is incomplete or inconsistent."""


class FormatError(TransDepthError):
    """A file could not be decoded (corrupt PNG, bad checkpoint header, ...)."""


class TrainingDiverged(TransDepthError):
    """The training loss became non-finite."""
