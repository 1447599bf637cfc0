"""Exception types shared across the package."""


class DeepKklError(Exception):
    """Base class for all library-specific errors."""


class InvalidArgumentError(DeepKklError, ValueError):
    """An argument violates a documented precondition (shape, range, name)."""


class InvalidStateError(DeepKklError, RuntimeError):
    """An operation was invoked with stale or inconsistent cached state."""


class NumericError(DeepKklError, ArithmeticError):
    """A computation produced non-finite values.

    ``detail`` optionally identifies the offending object (parameter block
    name, trajectory id, ...).
    """

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail


class NumericOverflowError(NumericError):
    """Integration state blew past the overflow guard.

    ``step_index`` is the sampling step at which the guard tripped, when the
    caller can attribute one.
    """

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class DegenerateScaleError(DeepKklError, ValueError):
    """Training outputs are constant, so the affine output scaler is undefined."""


class FileFormatError(DeepKklError, ValueError):
    """A dataset or model file failed to parse.

    ``line`` is the 1-based line number at which parsing failed, when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaMismatchError(FileFormatError):
    """A file header or descriptor does not match the expected schema."""
