"""Exception hierarchy shared by every subpackage."""


class CadeError(Exception):
    """Base class for all library errors."""


class ValidationError(CadeError, ValueError):
    """Input data violates a documented contract."""


class ManifestError(ValidationError):
    """Malformed manifest; carries the offending line and field when known."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class DuplicateIdError(ManifestError):
    pass


class UnknownTierError(ManifestError):
    pass


class DimensionMismatchError(ValidationError):
    pass


class ControllerStoppedError(CadeError, RuntimeError):
    """Raised when stepping a controller that already triggered early stopping."""


class CodecError(CadeError, OSError):
    """An image codec failed to encode or decode."""
