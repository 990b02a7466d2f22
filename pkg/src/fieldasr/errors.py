"""Exception hierarchy shared across the workbench.

Everything raised on purpose derives from FieldasrError so the CLI and the
HTTP service can map failures to exit codes / status codes in one place.
"""


class FieldasrError(Exception):
    """Base class for all workbench errors."""


class ParseError(FieldasrError):
    """Malformed input document (carries line/column when known)."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class StructuralError(FieldasrError):
    """Well-formed input that violates the expected document structure."""


class NotFoundError(FieldasrError):
    """A referenced entity (tier, speaker, model, job...) does not exist."""


class RangeError(FieldasrError):
    """A value or span falls outside its permitted range."""


class SizeError(FieldasrError):
    """An input is too small (or empty) for the requested operation."""


class FormatError(FieldasrError):
    """A binary/file format violation (bad header field, wrong codec...)."""


class IntegrityError(FieldasrError):
    """Stored data is inconsistent: duplicates, truncation, corruption."""


class VersionError(FieldasrError):
    """Serialized artifact has an unsupported format version."""

    def __init__(self, found, expected):
        super().__init__(f"unsupported format version {found} (expected {expected})")
        self.found = found
        self.expected = expected


class ShapeError(FieldasrError):
    """Tensor shape mismatch; names the operation and both shapes."""


class NumericError(FieldasrError):
    """Non-finite values where finite ones are required."""


class InfeasibleTargetError(FieldasrError):
    """CTC target needs more frames than the input provides."""

    def __init__(self, frames, required):
        super().__init__(
            f"target requires at least {required} frames, input has {frames}"
        )
        self.frames = frames
        self.required = required


class InvalidLabelError(FieldasrError):
    """A label index is not allowed in this position (e.g. blank)."""


class UndefinedRateError(FieldasrError):
    """Error-rate denominator is empty (empty reference)."""


class ParameterError(FieldasrError):
    """Invalid argument value for an operation."""
