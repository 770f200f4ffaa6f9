"""
Exception hierarchy for the lesiontag toolkit.
Each error carries the machine-readable class and exit code the CLI reports.
"""

from typing import Optional


class LesionTagError(Exception):
    """Base exception for all toolkit failures"""
    error_class = "internal-error"
    exit_code = 1


class BadArgumentError(LesionTagError, ValueError):
    """Raised when a caller violates an operation's preconditions"""
    error_class = "bad-argument"
    exit_code = 2


class DataError(LesionTagError):
    """Raised when input data is malformed or inconsistent"""
    error_class = "data-error"
    exit_code = 3


class NumericFailureError(LesionTagError, ArithmeticError):
    """Raised when a loss or gradient becomes non-finite"""
    error_class = "numeric-failure"
    exit_code = 4


class ManifestError(DataError):
    """Custom exception for manifest parsing issues"""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")
