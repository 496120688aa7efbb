"""Exception hierarchy shared across the package.

CLI exit codes: ConfigError -> 1, DataFormatError / CheckpointError -> 2,
TrainingDiverged / AcceptanceFailure -> 3.
"""


class EntromixError(Exception):
    pass


class ShapeError(EntromixError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(EntromixError, ValueError):
    """Input value outside the mathematical domain of an operation."""


class ContractError(EntromixError, RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class ConfigError(EntromixError, ValueError):
    """Invalid, unknown, or inconsistent configuration."""


class DataFormatError(EntromixError, ValueError):
    """Malformed trial file. Carries the byte offset of the first problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(EntromixError, ValueError):
    """Malformed or mismatched checkpoint container."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint container version not supported by this build."""


class CheckpointMissingTensor(CheckpointError):
    """The model expects a tensor the checkpoint does not provide."""


class CheckpointExtraTensor(CheckpointError):
    """The checkpoint provides a tensor the model has no slot for."""


class CheckpointShapeMismatch(CheckpointError):
    """A stored tensor's shape disagrees with the model's tensor."""


class TrainingDiverged(EntromixError, RuntimeError):
    """Non-finite training loss. Carries the last epoch that was finite."""

    def __init__(self, message: str, last_good_epoch: int):
        super().__init__(f"{message} (last good epoch: {last_good_epoch})")
        self.last_good_epoch = last_good_epoch


class AcceptanceFailure(EntromixError, RuntimeError):
    """A verification command (e.g. gradcheck) found violations."""
