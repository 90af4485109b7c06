"""Top-level package exports for dualmem-prototype.

Keep exports minimal: the streaming pipeline and exporters pull in
``evalkit`` and are imported from their own modules.
"""

from .config import RunConfig, load_config
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateInputError,
    DualMemError,
    InputError,
    ShapeError,
    StreamError,
    TrainingAborted,
)
from .model import DualMemoryModel, Wiring, build_model
from .tensor import GradientTape, Parameter, Tensor

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DegenerateInputError",
    "DualMemError",
    "DualMemoryModel",
    "GradientTape",
    "InputError",
    "Parameter",
    "RunConfig",
    "ShapeError",
    "StreamError",
    "Tensor",
    "TrainingAborted",
    "Wiring",
    "build_model",
    "load_config",
]
