"""
Batch normalization with three statistics regimes:

- TrainSource: normalize with batch statistics, track running statistics by momentum.
- Eval: normalize with stored running statistics, no state change.
- AdaptTarget: blend current-batch statistics with the frozen source snapshot,
  weighted by a decaying momentum, and store the blend as the running statistics.
"""
import logging
import math
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.domain.errors import (
    BNStatError,
    EpsilonError,
    InsufficientBatchError,
    MissingSourceSnapshotError,
    MomentumRangeError,
    ScheduleRangeError,
    SourceAlreadyFrozenError,
)
from src.engine.core.tensor import Tensor

from .functional import channel_mean, channel_var

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-5
DEFAULT_SOURCE_MOMENTUM = 0.1


def _check_momentum(value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise MomentumRangeError(f"momentum must lie in [0, 1], got {value}")
    return float(value)


class BNRegime(str, Enum):
    TRAIN_SOURCE = "train_source"
    EVAL = "eval"
    ADAPT_TARGET = "adapt_target"


class BNMode(BaseModel):
    model_config = ConfigDict(frozen=True)

    regime: BNRegime
    momentum: float = Field(0.0, ge=0.0, le=1.0)

    @classmethod
    def train_source(cls, eta: float = DEFAULT_SOURCE_MOMENTUM) -> "BNMode":
        return cls(regime=BNRegime.TRAIN_SOURCE, momentum=_check_momentum(eta))

    @classmethod
    def eval(cls) -> "BNMode":
        return cls(regime=BNRegime.EVAL)

    @classmethod
    def adapt_target(cls, eta_t: float) -> "BNMode":
        return cls(regime=BNRegime.ADAPT_TARGET, momentum=_check_momentum(eta_t))


class BNChannelStats(BaseModel):
    """
    Per-channel statistics of one BN layer: running mean/variance, learnable scale and
    shift, and the source snapshot captured once by `freeze_source`.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    running_mean: np.ndarray
    running_var: np.ndarray
    gamma: Tensor
    beta: Tensor
    eps: float = DEFAULT_EPS
    source_mean: Optional[np.ndarray] = None
    source_var: Optional[np.ndarray] = None
    source_gamma: Optional[np.ndarray] = None
    source_beta: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, num_channels: int, name: str = "bn", eps: float = DEFAULT_EPS, dtype=np.float64) -> "BNChannelStats":
        """gamma=1, beta=0, running mean 0, running variance 1."""
        return cls(
            running_mean=np.zeros(num_channels, dtype=dtype),
            running_var=np.ones(num_channels, dtype=dtype),
            gamma=Tensor(np.ones(num_channels, dtype=dtype), requires_grad=True, name=f"{name}.gamma"),
            beta=Tensor(np.zeros(num_channels, dtype=dtype), requires_grad=True, name=f"{name}.beta"),
            eps=eps,
        )

    @property
    def num_channels(self) -> int:
        return int(self.running_mean.shape[0])

    @property
    def frozen(self) -> bool:
        return self.source_mean is not None

    def require_snapshot(self) -> None:
        if not self.frozen:
            raise MissingSourceSnapshotError("BN layer has no frozen source snapshot; run freeze_source first")


def update_running_source(stats: BNChannelStats, batch_mean: np.ndarray, batch_var: np.ndarray,
                          eta: float) -> BNChannelStats:
    """Momentum tracking of running statistics: mu_bar <- (1 - eta) * mu_bar + eta * mu_batch."""
    eta = _check_momentum(eta)
    batch_mean = np.asarray(batch_mean, dtype=stats.running_mean.dtype)
    batch_var = np.asarray(batch_var, dtype=stats.running_var.dtype)
    if np.any(batch_var < 0):
        raise BNStatError("batch variance must be non-negative")
    keep, take = 1.0 - eta, eta
    stats.running_mean = keep * stats.running_mean + take * batch_mean
    stats.running_var = keep * stats.running_var + take * batch_var
    return stats


def emd_momentum(t: int, eta0: float, tau: float = 1.0) -> float:
    """Exponential momentum decay: eta_t = eta0 * exp(-t / tau). tau = 1 gives eta0 * exp(-t)."""
    if tau <= 0:
        raise ScheduleRangeError(f"decay scale tau must be > 0, got {tau}")
    if t < 0:
        raise ScheduleRangeError(f"iteration must be >= 0, got {t}")
    return _check_momentum(eta0) * math.exp(-t / tau)


def _snapshot(values: np.ndarray) -> np.ndarray:
    copy = np.array(values, copy=True)
    copy.flags.writeable = False
    return copy


def freeze_source(stats: BNChannelStats) -> BNChannelStats:
    """Capture the source snapshot from the current running and learned values. Allowed once."""
    if stats.frozen:
        raise SourceAlreadyFrozenError("source snapshot is already frozen")
    stats.source_mean = _snapshot(stats.running_mean)
    stats.source_var = _snapshot(stats.running_var)
    stats.source_gamma = _snapshot(stats.gamma.data)
    stats.source_beta = _snapshot(stats.beta.data)
    return stats


def restore_source(stats: BNChannelStats, mean: np.ndarray, var: np.ndarray,
                   gamma: np.ndarray, beta: np.ndarray) -> BNChannelStats:
    """Install a previously frozen snapshot (checkpoint load). Same once-only rule as freeze_source."""
    if stats.frozen:
        raise SourceAlreadyFrozenError("source snapshot is already frozen")
    if np.any(np.asarray(var) < 0):
        raise BNStatError("source variance must be non-negative")
    stats.source_mean = _snapshot(mean)
    stats.source_var = _snapshot(var)
    stats.source_gamma = _snapshot(gamma)
    stats.source_beta = _snapshot(beta)
    return stats


def _normalize(x: Tensor, mean: Tensor, var: Tensor, stats: BNChannelStats) -> Tensor:
    # Single code path for every regime: the equivalences between regimes are bit-exact.
    x_hat = (x - mean) / (var + stats.eps).sqrt()
    return x_hat * stats.gamma + stats.beta


def _check_batch(x: Tensor) -> None:
    per_channel = x.size // x.shape[-1] if x.shape[-1] else 0
    if per_channel < 2:
        raise InsufficientBatchError(
            f"batch statistics need B*H*W >= 2 values per channel, got {per_channel} for shape {x.shape}"
        )


def bn_forward_with_stats(x: Tensor, stats: BNChannelStats, mode: BNMode
                          ) -> Tuple[Tensor, Optional[np.ndarray], Optional[np.ndarray]]:
    """
    Run one BN forward and also return the raw current-batch mean and variance
    (None in Eval mode, which computes no batch statistics).
    """
    if stats.eps <= 0:
        raise EpsilonError(f"epsilon must be > 0, got {stats.eps}")

    if mode.regime == BNRegime.EVAL:
        mean = Tensor(stats.running_mean)
        var = Tensor(stats.running_var)
        return _normalize(x, mean, var, stats), None, None

    _check_batch(x)
    batch_mean = channel_mean(x)
    batch_var = channel_var(x)

    if mode.regime == BNRegime.TRAIN_SOURCE:
        out = _normalize(x, batch_mean, batch_var, stats)
        update_running_source(stats, batch_mean.data, batch_var.data, mode.momentum)
        return out, batch_mean.data, batch_var.data

    stats.require_snapshot()
    eta_t = mode.momentum
    # The source snapshot terms are constants; gradients flow through the batch terms only.
    blended_mean = batch_mean.scale(1.0 - eta_t) + Tensor(eta_t * stats.source_mean)
    blended_var = batch_var.scale(1.0 - eta_t) + Tensor(eta_t * stats.source_var)
    out = _normalize(x, blended_mean, blended_var, stats)
    stats.running_mean = blended_mean.detach().numpy()
    stats.running_var = blended_var.detach().numpy()
    return out, batch_mean.data, batch_var.data


def bn_forward(x: Tensor, stats: BNChannelStats, mode: BNMode) -> Tensor:
    out, _, _ = bn_forward_with_stats(x, stats, mode)
    return out


class BatchNorm2d:
    """A BN layer over (B, H, W, C) feature maps; remembers the last batch statistics it saw."""

    def __init__(self, name: str, num_channels: int, eps: float = DEFAULT_EPS, dtype=np.float64):
        self.name = name
        self.stats = BNChannelStats.initial(num_channels, name=name, eps=eps, dtype=dtype)
        self.last_batch_mean: Optional[np.ndarray] = None
        self.last_batch_var: Optional[np.ndarray] = None

    @property
    def num_channels(self) -> int:
        return self.stats.num_channels

    def __call__(self, x: Tensor, mode: BNMode) -> Tensor:
        out, batch_mean, batch_var = bn_forward_with_stats(x, self.stats, mode)
        if batch_mean is not None:
            self.last_batch_mean = batch_mean
            self.last_batch_var = batch_var
        return out

    def freeze_source(self) -> None:
        freeze_source(self.stats)
        logger.debug(f"Froze source snapshot of {self.name} ({self.num_channels} channels)")

    def parameters(self) -> List[Tensor]:
        return [self.stats.gamma, self.stats.beta]
