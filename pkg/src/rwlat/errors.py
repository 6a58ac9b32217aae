"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: ValidationError -> 1,
FormatError (and I/O errors) -> 2.
"""


class RwlatError(Exception):
    """Base class for all package errors."""


class ValidationError(RwlatError):
    """An input violates a documented precondition or invariant."""


class NoAdmissiblePathError(ValidationError):
    """The lattice assigns zero probability to every complete path."""


class ScorerError(ValidationError):
    """A scorer returned an ill-formed (unnormalized or misshapen) distribution."""


class NonFiniteLossError(ValidationError):
    """A loss evaluated to NaN or infinity."""


class FormatError(RwlatError):
    """A file could not be parsed; carries a line number when known."""

    def __init__(self, message: str, *, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingDivergedError(RwlatError):
    """Training produced a non-finite loss; carries the last good parameters."""

    def __init__(self, message: str, *, step: int, last_params=None, log=None):
        super().__init__(message)
        self.step = step
        self.last_params = last_params
        self.log = log if log is not None else []
