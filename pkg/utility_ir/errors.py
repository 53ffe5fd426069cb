"""
Error types for the weather restoration toolkit.

Every error carries the process exit code the CLI reports for it.
"""
from typing import Optional


class UtilityIRError(Exception):
    """Base class for all toolkit errors"""

    exit_code = 1


class InvalidSpecError(UtilityIRError, ValueError):
    """Degradation spec does not fit the generator it was handed to"""

    exit_code = 2


class ShapeError(UtilityIRError, ValueError):
    """Tensor shapes violate a contract (divisibility, broadcasting, zero norm)"""

    exit_code = 2


class ConfigError(UtilityIRError, ValueError):
    """Invalid configuration value or combination"""

    exit_code = 2


class DataError(UtilityIRError):
    """Missing or undecodable files, malformed manifest, empty corpus"""

    exit_code = 3


class NumericFailure(UtilityIRError):
    """Non-finite loss during training"""

    exit_code = 4

    def __init__(self, message: str, dump_path: Optional[str] = None):
        super().__init__(message)
        self.dump_path = dump_path


class CheckpointError(UtilityIRError):
    """Checkpoint file is truncated, foreign or from another format version"""

    exit_code = 5


__all__ = [
    "UtilityIRError",
    "InvalidSpecError",
    "ShapeError",
    "ConfigError",
    "DataError",
    "NumericFailure",
    "CheckpointError",
]
