"""
⚠️ Error Types
Exception hierarchy shared by every module; the CLI maps it to exit codes.
"""

from typing import Optional


class FlickerLabError(Exception):
    """Base class for all project errors"""


class ValidationError(FlickerLabError, ValueError):
    """Invalid input, configuration or artifact (CLI exit code 1)"""


class ShapeError(ValidationError):
    """Tensor dimensions do not agree"""


class ConfigError(ValidationError):
    """Configuration failed schema or readiness checks"""


class FormatError(ValidationError):
    """Binary artifact is malformed"""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ArchitectureMismatchError(ValidationError):
    """Checkpoint holds a different architecture than requested"""


class FlickerRuntimeError(FlickerLabError, RuntimeError):
    """Failure while running a computation (CLI exit code 2)"""


class TrainingError(FlickerRuntimeError):
    """Classifier training diverged"""

    def __init__(self, message: str, iteration: int):
        self.iteration = iteration
        super().__init__(f"{message} (iteration {iteration})")


class OptimizationError(FlickerRuntimeError):
    """Perturbation optimization produced a non-finite objective"""

    def __init__(self, message: str, iteration: int):
        self.iteration = iteration
        super().__init__(f"{message} (iteration {iteration})")


class CalibrationError(FlickerRuntimeError):
    """Channel calibration could not be solved"""
