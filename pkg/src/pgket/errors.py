"""Exception hierarchy shared across the package."""


class PgketError(Exception):
    """Base class for every error raised by pgket."""


class ShapeError(PgketError, ValueError):
    pass


class ValidationError(PgketError, ValueError):
    pass


class CapacityError(PgketError, MemoryError):
    """Requested Fock space exceeds the configured memory budget."""


class TruncationError(PgketError):
    """Fock-state leakage past the cutoff is above the caller's tolerance."""


class UnsupportedModeError(PgketError):
    pass


class DivergenceError(PgketError, FloatingPointError):
    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
        self.epoch = epoch


class FormatError(PgketError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(PgketError):
    pass


class ConfigError(PgketError):
    pass
