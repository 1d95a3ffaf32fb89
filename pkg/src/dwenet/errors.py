"""Exception types raised across dwenet."""


class DwenetError(Exception):
    """Base class for all dwenet errors."""


class ShapeError(DwenetError, ValueError):
    """Tensor shapes do not conform to an operation's contract."""


class GradientError(DwenetError, RuntimeError):
    """Invalid use of reverse-mode differentiation."""


class DataFormatError(DwenetError, ValueError):
    """A dataset or embedding file line could not be parsed."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None) -> None:
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(f"{where}{message}")


class ConfigError(DwenetError, ValueError):
    """Invalid configuration value or unknown key."""

    def __init__(self, message: str, key: str | None = None) -> None:
        self.key = key
        super().__init__(message)


class CheckpointError(DwenetError, ValueError):
    """A checkpoint file could not be read or applied."""


class ChecksumError(CheckpointError):
    """Checkpoint contents do not match the stored checksum."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class CheckpointConfigError(CheckpointError):
    """Checkpoint does not match the expected model configuration."""


class TrainingDivergedError(DwenetError, RuntimeError):
    """Loss became NaN or infinite during training."""

    def __init__(self, step: int, lr: float, batch_id: int, loss: float) -> None:
        self.step = step
        self.lr = lr
        self.batch_id = batch_id
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss} at step {step} (lr={lr:.3e}, batch={batch_id})"
        )
