"""Exception types shared across the package."""


class SynfieldError(Exception):
    """Base class for all package errors."""


class DomainError(SynfieldError, ValueError):
    """A value lies outside its mathematical domain (e.g. coordinate out of range)."""


class ShapeError(SynfieldError, ValueError):
    """Array shapes are inconsistent with the operation's contract."""


class NumericError(SynfieldError, ArithmeticError):
    """A non-finite value appeared where finite numbers are required."""


class ConfigError(SynfieldError, ValueError):
    """A configuration file or CLI option is invalid."""


class CheckpointFormatError(SynfieldError, ValueError):
    """A checkpoint file is corrupt, truncated, or of an unsupported version."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
