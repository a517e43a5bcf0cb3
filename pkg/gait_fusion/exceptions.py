"""Custom exceptions for the gait severity pipeline."""

from typing import Optional


class GaitFusionError(Exception):
    """Base exception for all gait_fusion errors."""
    pass


class ConfigurationError(GaitFusionError):
    """Raised when there is a configuration error."""
    pass


class ContractError(GaitFusionError):
    """Raised when an operation is called outside its preconditions."""
    pass


class DataValidationError(GaitFusionError):
    """Raised when pose or feature data violates its invariants."""
    pass


class PoseParseError(DataValidationError):
    """Raised when a pose JSONL line cannot be parsed or validated."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class DegenerateSequenceError(DataValidationError):
    """Raised when a sequence has no usable body scale."""
    pass


class CheckpointError(GaitFusionError):
    """Raised when a checkpoint is missing, corrupt or incompatible."""
    pass
