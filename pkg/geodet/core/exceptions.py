"""
geodet Exceptions
=================

Structured error hierarchy shared by every layer of the toolkit.

Each exception carries a human-readable message, a stable error code, and a
details dictionary so the command line can report failures uniformly and
tests can assert on specific fields (offending line, point index, tensor).
"""

from typing import Any, Dict, Optional


class GeoDetException(Exception):
    """Base exception for all geodet errors."""

    def __init__(self, message: str, error_code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.error_code = error_code or self.__class__.__name__
        self.details = details or {}
        super().__init__(self.message)

    def to_dict(self) -> Dict[str, Any]:
        """Serializable form used by CLI reports and sweep rows."""
        return {"error": self.error_code, "message": self.message, "details": self.details}


class ValidationError(GeoDetException):
    """Input data violates a domain invariant."""
    pass


class PointCloudValidationError(ValidationError):
    """Point cloud with mismatched lengths, non-finite coordinates or out-of-range colors."""
    pass


class AnnotationValidationError(ValidationError):
    """Scene annotation or detection document failed schema validation."""
    pass


class SuperpointLabelError(ValidationError):
    """Superpoint label file with wrong length, negative or malformed ids."""
    pass


class ParseError(GeoDetException):
    """Malformed input bytes. Details name the offending line where one exists."""

    def __init__(self, message: str, line: Optional[int] = None, text: Optional[str] = None,
                 error_code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        details = dict(details or {})
        if line is not None:
            details["line"] = line
        if text is not None:
            details["text"] = text
        super().__init__(message, error_code=error_code, details=details)
        self.line = line
        self.text = text


class TruncationError(ParseError):
    """Fewer records in the body than the header declares."""
    pass


class ShapeError(GeoDetException):
    """Array dimensions disagree with what an operation requires."""

    def __init__(self, message: str, expected: Any = None, actual: Any = None,
                 error_code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        details = dict(details or {})
        if expected is not None:
            details["expected"] = expected
        if actual is not None:
            details["actual"] = actual
        super().__init__(message, error_code=error_code, details=details)


class ConfigurationError(GeoDetException):
    """Invalid hyperparameter or run configuration."""
    pass


class CheckpointError(GeoDetException):
    """Checkpoint document is truncated, malformed, or does not fit the requested shapes."""
    pass


class TrainingError(GeoDetException):
    """Training could not proceed."""
    pass


class NonFiniteError(TrainingError):
    """A loss or tensor became NaN/Inf during training."""
    pass


class SceneSpecError(GeoDetException):
    """Synthetic scene specification cannot be satisfied."""
    pass
