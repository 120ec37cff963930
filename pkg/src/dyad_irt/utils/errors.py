"""Custom exceptions for dyad-irt."""

from __future__ import annotations


class DyadIrtError(Exception):
    """Base exception for dyad-irt."""


class InvalidArgumentError(DyadIrtError, ValueError):
    """Raised when an argument value is outside what an operation accepts."""


class DomainError(InvalidArgumentError):
    """Raised when reduced-form moments admit no valid hyperparameters."""


class InvalidConfigError(DyadIrtError):
    """Raised when configuration is invalid."""


class SpecificationError(DyadIrtError):
    """Raised when a model specification does not fit the data it is applied to."""


class IdentificationError(DyadIrtError):
    """Raised when the design cannot identify a parameter the model frees."""


class IngestionError(DyadIrtError):
    """Raised when an input table is malformed."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None) -> None:
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        elif line is not None:
            location = f"line {line}: "
        super().__init__(f"{location}{message}")


class InvalidStateError(DyadIrtError):
    """Raised when an operation needs artifacts that a previous run did not keep."""

    def __init__(self, message: str, *, hint: str | None = None) -> None:
        self.hint = hint
        if hint:
            message = f"{message}\n - {hint}"
        super().__init__(message)
