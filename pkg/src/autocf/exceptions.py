"""
Error types raised by the engine.

Each error also derives from the closest builtin so callers may catch either.
"""
from typing import Optional


class AutoCFError(Exception):
    """Base class for engine errors."""


class ConfigError(AutoCFError, ValueError):
    """Invalid configuration value; `key` names the offending setting when known."""

    def __init__(self, message: str, key: Optional[str] = None) -> None:
        super().__init__(message)
        self.key = key


class DatasetParseError(AutoCFError, ValueError):
    """Malformed interaction file line."""

    def __init__(self, message: str, line_number: Optional[int] = None) -> None:
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class EmptyDatasetError(AutoCFError, ValueError):
    """Interaction file holds no interactions."""


class NodeIndexError(AutoCFError, IndexError):
    """Node id outside [0, |U|+|I|)."""


class CapacityError(AutoCFError, ValueError):
    """Graph cannot host the requested number of new edges."""


class DimensionError(AutoCFError, ValueError):
    """Tensor shapes are incompatible for a primitive."""


class DomainError(AutoCFError, ValueError):
    """Primitive input outside its mathematical domain."""


class ReproducibilityError(AutoCFError, RuntimeError):
    """A function expected to be deterministic returned different values."""


class NonFiniteError(AutoCFError, FloatingPointError):
    """NaN or Inf encountered; `parameter` names the tensor when known."""

    def __init__(self, message: str, parameter: Optional[str] = None) -> None:
        super().__init__(message)
        self.parameter = parameter


class TrainingDivergedError(NonFiniteError):
    """Loss became non-finite; the last good state was written to `checkpoint_path`."""

    def __init__(self, message: str, checkpoint_path: Optional[str] = None) -> None:
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class CheckpointNotFoundError(AutoCFError, FileNotFoundError):
    """Requested checkpoint does not exist."""
