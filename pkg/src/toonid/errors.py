"""Structured error types shared across the engine."""

from __future__ import annotations

from typing import Any


class EngineError(Exception):
    """Base class for all engine errors; carries a machine-readable payload."""

    code = "engine_error"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_json(self) -> dict:
        return {"error": self.code, "message": self.message, **self.details}


class DimensionMismatchError(EngineError):
    code = "dimension_mismatch"


class ZeroVectorError(EngineError):
    code = "zero_vector"


class DegenerateProjectionError(EngineError):
    code = "degenerate_projection"


class ManifestError(EngineError):
    """Raised when a manifest cannot be parsed at all (fatal, unlike issues)."""

    code = "manifest_error"


class DanglingReferenceError(EngineError):
    code = "dangling_reference"


class EmptyInputError(EngineError):
    code = "empty_input"


class EvaluationError(EngineError):
    code = "evaluation_error"


class TransportError(EngineError):
    code = "transport_error"


class ResponseFormatError(EngineError):
    code = "response_format"


class StageError(EngineError):
    """Wraps a failure inside one pipeline stage with the stage name."""

    code = "stage_error"

    def __init__(self, stage: str, cause: Exception):
        message = f"stage '{stage}' failed: {cause}"
        details = cause.to_json() if isinstance(cause, EngineError) else {"cause": str(cause)}
        details = {k: v for k, v in details.items() if k not in ("error", "message")}
        super().__init__(message, stage=stage, **details)
        self.stage = stage
        self.cause = cause
