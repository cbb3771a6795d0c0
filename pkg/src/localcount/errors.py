"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: DataError -> 2, NumericError -> 3.
"""


class LocalCountError(Exception):
    """Base class for all package errors."""


class ShapeError(LocalCountError, ValueError):
    """Tensor or parameter shapes do not agree.

    ``dims`` maps dimension names to the offending ``(expected, got)`` pair.
    """

    def __init__(self, message, **dims):
        self.dims = dims
        if dims:
            detail = ", ".join(f"{k}: expected {e}, got {g}" for k, (e, g) in dims.items())
            message = f"{message} ({detail})"
        super().__init__(message)


class DataError(LocalCountError):
    """Malformed or missing input data (manifests, annotations, images)."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class NumericError(LocalCountError, ArithmeticError):
    """Non-finite values encountered during training."""


class CheckpointError(LocalCountError):
    """Checkpoint file is truncated, corrupt, or of an unknown version."""
