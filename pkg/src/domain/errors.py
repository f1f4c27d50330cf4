from typing import Sequence


class BNStatError(Exception):
    """Base class for all errors raised by the engine, services and CLI."""
    pass


class ShapeMismatchError(BNStatError):
    """Raised when a primitive receives inputs whose extents it cannot combine."""

    def __init__(self, op: str, extents: Sequence[Sequence[int]], detail: str = ""):
        self.op = op
        self.extents = [tuple(e) for e in extents]
        message = f"Shape mismatch in '{op}': extents {self.extents}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class NonScalarLossError(BNStatError):
    """Raised when backward is called on a tensor with more than one element."""
    pass


class EmptyGraphError(BNStatError):
    """Raised when backward finds no recorded operation behind the loss."""
    pass


class NonFiniteError(BNStatError):
    """Raised when an operation that declares finite output produces NaN/Inf."""
    pass


class MomentumRangeError(BNStatError):
    pass


class EpsilonError(BNStatError):
    pass


class InsufficientBatchError(BNStatError):
    """Raised when batch statistics are requested over fewer than two values."""
    pass


class SourceAlreadyFrozenError(BNStatError):
    pass


class MissingSourceSnapshotError(BNStatError):
    pass


class ScheduleExhaustedError(BNStatError):
    pass


class ScheduleRangeError(BNStatError):
    pass


class ChannelCountMismatchError(BNStatError):
    pass


class DistributionError(BNStatError):
    """Raised when per-pixel class probabilities do not form distributions."""
    pass


class EmptyDatasetError(BNStatError):
    pass


class SpatialSizeError(BNStatError):
    pass


class StepSizeError(BNStatError):
    pass


class TensorFormatError(BNStatError):
    """Raised for malformed BNT1 tensor files (bad magic, version, dtype or truncation)."""
    pass


class CheckpointFormatError(BNStatError):
    pass


class ConfigError(BNStatError):
    pass
