"""Exception hierarchy shared by every beamcast module

Each class carries the CLI exit code it maps to: 2 for validation/user
errors, 3 for runtime numerical failures.
"""

from typing import Optional


class BeamcastError(Exception):
    """Base exception for beamcast errors"""

    exit_code = 2


class DimensionError(BeamcastError, ValueError):
    """Tensor shape, channel count or vector length mismatch"""

    pass


class ConfigurationError(BeamcastError, ValueError):
    """Invalid configuration value or unknown configuration key"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class LabelRangeError(BeamcastError, IndexError):
    """Class label outside [0, Q)"""

    pass


class GeometryError(BeamcastError):
    """Degenerate BS/UAV geometry (e.g. zero distance)"""

    pass


class FrustumError(BeamcastError):
    """UAV lies behind the camera and cannot be projected"""

    pass


class DatasetError(BeamcastError):
    """Dataset directory missing, unreadable or inconsistent with its manifest"""

    pass


class CheckpointError(BeamcastError):
    """Checkpoint has bad magic, unknown version, or is truncated/corrupt"""

    pass


class EvaluationError(BeamcastError):
    """Evaluation requested on an empty split"""

    pass


class TrainingError(BeamcastError):
    """Numerical failure during training (non-finite gradient, reused graph)"""

    exit_code = 3

    def __init__(self, message: str, parameter: Optional[str] = None):
        super().__init__(f"{message} (parameter: {parameter})" if parameter else message)
        self.parameter = parameter


class NonFiniteLossError(TrainingError):
    """Loss became NaN/Inf; carries the epoch and batch where it happened"""

    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"Non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value
