"""Exception hierarchy shared by every dualmem package."""

from __future__ import annotations


class DualMemError(Exception):
    """Base class for all errors raised by this project."""


class ShapeError(DualMemError, ValueError):
    """Operand extents are incompatible (broadcast, contraction, channels)."""


class ConfigError(DualMemError, ValueError):
    """A configuration value is out of range or unknown."""


class InputError(DualMemError, ValueError):
    """Caller-supplied data violates a precondition (extents, NaN, ordering)."""


class DegenerateInputError(InputError):
    """Geometric input is degenerate (collinear points, empty cloud, ...)."""


class StreamError(DualMemError, RuntimeError):
    """The streaming state machine produced an invalid frame."""

    def __init__(self, message: str, frame_index: int | None = None) -> None:
        if frame_index is not None:
            message = f"frame {frame_index}: {message}"
        super().__init__(message)
        self.frame_index = frame_index


class CheckpointError(DualMemError, ValueError):
    """A checkpoint or buffer file failed manifest validation."""


class TrainingAborted(DualMemError, RuntimeError):
    """Training stopped after repeated non-finite losses."""
