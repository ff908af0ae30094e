"""Exception hierarchy shared by the services and mapped to CLI exit codes."""


class AscalError(Exception):
    """Base class for toolkit errors"""


class ConfigError(AscalError):
    """Configuration is inconsistent beyond what field validation catches"""


class DatasetError(AscalError):
    """Dataset file or container problem"""


class DatasetFormatError(DatasetError):
    """A record could not be parsed"""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class DatasetShapeError(DatasetError):
    """Records disagree with the declared shape or class count"""


class EmptyDatasetError(DatasetError):
    """File or container holds no sequences"""


class ShapeMismatchError(AscalError):
    """Parameter trees or tensors do not line up"""


class DivergenceError(AscalError):
    """A non-finite loss, gradient or activation was produced"""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        suffix = f" (step {step})" if step is not None else ""
        super().__init__(f"{message}{suffix}")


class CheckpointError(AscalError):
    """Checkpoint missing, corrupt or incompatible"""


class ProtocolError(AscalError):
    """An evaluation protocol contract was violated"""
