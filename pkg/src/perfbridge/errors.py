"""Exception types shared across the toolkit."""

from __future__ import annotations


class PerfBridgeError(Exception):
    """Base class for all toolkit errors."""


class InputError(PerfBridgeError, ValueError):
    """Invalid argument or malformed input data."""


class ParseError(InputError):
    """A record in an input file could not be parsed.

    ``location`` is a human-readable pointer such as ``"measurements.csv:14"``.
    """

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class GraphError(PerfBridgeError):
    """Structural problem in a dependency graph (cycles, missing nodes)."""


class ModelValidationError(InputError):
    """The QPN model document violates a structural invariant."""


class StageError(PerfBridgeError):
    """Wraps an error raised inside one pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
