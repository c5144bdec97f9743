"""Exception taxonomy shared by all seqkd modules."""


class SeqKDError(Exception):
    """Base class for all seqkd errors."""


class DimensionError(SeqKDError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class LengthError(SeqKDError, ValueError):
    """A sequence extent does not divide evenly by a pooling window."""


class ConfigError(SeqKDError, ValueError):
    """A configuration violates one of its invariants."""


class DataError(SeqKDError, ValueError):
    """An input record is malformed or cannot be mapped onto tokens."""


class ContractError(SeqKDError, RuntimeError):
    """A caller violated an API precondition."""


class TrainingError(SeqKDError, RuntimeError):
    """Training aborted; carries the global step where it happened."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
