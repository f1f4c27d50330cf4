"""
Source-free target adaptation driven by BN statistics.

The objective per step is L = L_HBS + lambda_t * L_SE:

- L_HBS keeps the learned scale/shift of every BN channel close to its frozen
  source value, weighted by (1 + alpha) where alpha favours channels whose
  normalized source and target means are close.
- L_SE is the mean per-pixel Shannon entropy of the softmax output.
"""
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.domain.errors import (
    BNStatError,
    ChannelCountMismatchError,
    DistributionError,
    EmptyDatasetError,
    InsufficientBatchError,
    MissingSourceSnapshotError,
    ScheduleExhaustedError,
    ScheduleRangeError,
)
from src.domain.event import EventType
from src.domain.schedule import AdaptFlags, AdaptSchedule, LayerDistance, StepReport
from src.engine.core.tensor import Tensor, backward
from src.engine.layers.batchnorm import BNChannelStats, BNMode
from src.engine.optim import SGD
from src.infrastructure.event_bus import publish
from src.infrastructure.rng import SeedStreams
from src.models.segnet import ToyUNet

logger = logging.getLogger(__name__)

EPS_LOG = 1e-12
DISTRIBUTION_TOLERANCE = 1e-6
COLLAPSE_FRACTION = 0.99


class TransferabilityWeights(BaseModel):
    """Per-channel distances and weights, concatenated over layers in forward order."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    distances: np.ndarray
    weights: np.ndarray
    layer_sizes: List[int]

    @property
    def num_channels(self) -> int:
        return int(self.weights.shape[0])

    def per_layer(self) -> List[np.ndarray]:
        bounds = np.cumsum([0] + self.layer_sizes)
        return [self.weights[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]


def channel_distance(stats: BNChannelStats, batch_mean: np.ndarray, batch_var: np.ndarray) -> np.ndarray:
    """
    Per-channel distance between the normalized source mean and the normalized
    current-batch mean: |mu_K / sqrt(var_K + eps) - mu_t / sqrt(var_t + eps)|.
    """
    stats.require_snapshot()
    batch_mean = np.asarray(batch_mean, dtype=np.float64)
    batch_var = np.asarray(batch_var, dtype=np.float64)
    if batch_mean.shape != (stats.num_channels,) or batch_var.shape != (stats.num_channels,):
        raise ChannelCountMismatchError(
            f"expected {stats.num_channels} batch statistics per channel, got {batch_mean.shape} and {batch_var.shape}"
        )
    if np.any(batch_var < 0) or np.any(stats.source_var < 0):
        raise BNStatError("variances must be non-negative")
    source = stats.source_mean / np.sqrt(stats.source_var + stats.eps)
    target = batch_mean / np.sqrt(batch_var + stats.eps)
    return np.abs(source - target)


def _as_layers(distances: Union[np.ndarray, Sequence[np.ndarray]]) -> List[np.ndarray]:
    if isinstance(distances, np.ndarray) and distances.ndim <= 1:
        return [distances.reshape(-1)]
    return [np.asarray(d, dtype=np.float64).reshape(-1) for d in distances]


def transferability_weights(distances: Union[np.ndarray, Sequence[np.ndarray]]) -> TransferabilityWeights:
    """
    alpha_c = N * (1 + d_c)^-1 / sum_c' (1 + d_c')^-1 over all N channels of all layers,
    so the weights average to one.
    """
    layers = _as_layers(distances)
    d = np.concatenate(layers).astype(np.float64) if layers else np.zeros(0)
    if d.size == 0:
        raise ChannelCountMismatchError("transferability weights need at least one channel")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise BNStatError("channel distances must be finite and non-negative")
    inverse = 1.0 / (1.0 + d)
    alpha = d.size * inverse / inverse.sum()
    return TransferabilityWeights(distances=d, weights=alpha, layer_sizes=[layer.size for layer in layers])


def uniform_weights(distances: Union[np.ndarray, Sequence[np.ndarray]]) -> TransferabilityWeights:
    """alpha = 1 everywhere (adaptive channel weighting switched off)."""
    layers = _as_layers(distances)
    d = np.concatenate(layers).astype(np.float64) if layers else np.zeros(0)
    if d.size == 0:
        raise ChannelCountMismatchError("transferability weights need at least one channel")
    return TransferabilityWeights(distances=d, weights=np.ones_like(d), layer_sizes=[layer.size for layer in layers])


def hbs_loss(stats: Sequence[BNChannelStats], alpha: TransferabilityWeights) -> Tensor:
    """sum over layers and channels of (1 + alpha) * (|gamma_K - gamma| + |beta_K - beta|)."""
    stats = list(stats)
    total_channels = sum(s.num_channels for s in stats)
    if total_channels != alpha.num_channels or [s.num_channels for s in stats] != alpha.layer_sizes:
        raise ChannelCountMismatchError(
            f"weights cover layers {alpha.layer_sizes} but stats have {[s.num_channels for s in stats]}"
        )

    loss: Optional[Tensor] = None
    for layer_stats, layer_alpha in zip(stats, alpha.per_layer()):
        layer_stats.require_snapshot()
        dtype = layer_stats.gamma.dtype
        # alpha is a per-step constant: no gradient reaches the batch statistics it came from.
        weight = Tensor(np.asarray(1.0 + layer_alpha, dtype=dtype))
        gap = (layer_stats.gamma - Tensor(layer_stats.source_gamma)).abs() + \
              (layer_stats.beta - Tensor(layer_stats.source_beta)).abs()
        term = (gap * weight).sum()
        loss = term if loss is None else loss + term
    return loss


def _check_distribution(probs: Tensor) -> None:
    data = probs.data
    if data.ndim < 2 or data.shape[-1] < 1:
        raise DistributionError(f"expected (..., K) class probabilities, got shape {data.shape}")
    if np.any(data < -DISTRIBUTION_TOLERANCE) or np.any(data > 1.0 + DISTRIBUTION_TOLERANCE):
        raise DistributionError("class probabilities must lie in [0, 1]")
    sums = data.sum(axis=-1)
    worst = float(np.max(np.abs(sums - 1.0))) if sums.size else 0.0
    if worst > DISTRIBUTION_TOLERANCE:
        raise DistributionError(f"class probabilities must sum to 1 per pixel (off by {worst:.3g})")


def se_loss(probs: Tensor) -> Tensor:
    """Mean per-pixel Shannon entropy -sum_k p_k log(p_k + eps); lies in [0, log K]."""
    _check_distribution(probs)
    pixels = probs.size // probs.shape[-1]
    if pixels == 0:
        raise DistributionError("entropy of an empty prediction is undefined")
    return (probs * (probs + EPS_LOG).log()).sum().scale(-1.0 / pixels)


def lambda_at(schedule: AdaptSchedule, t: int) -> float:
    """Linear interpolation from lambda_start (t=0) to lambda_end (t=T)."""
    total = schedule.total_iters
    if not 0 <= t <= total:
        raise ScheduleRangeError(f"t must lie in [0, {total}], got {t}")
    if total == 0:
        return float(schedule.lambda_start)
    return schedule.lambda_start + (schedule.lambda_end - schedule.lambda_start) * t / total


def class_fractions(probs: np.ndarray) -> List[float]:
    num_classes = probs.shape[-1]
    labels = np.argmax(probs, axis=-1).reshape(-1)
    counts = np.bincount(labels, minlength=num_classes)
    return [float(c) / max(labels.size, 1) for c in counts]


def collapse_warning(fractions: Sequence[float], t: int) -> bool:
    """Warn when the batch predictions have collapsed onto a single class."""
    top = max(fractions) if fractions else 0.0
    if top > COLLAPSE_FRACTION:
        logger.warning(
            f"⚠️ Prediction collapse at step {t}: class {int(np.argmax(fractions))} holds {top:.2%} of pixels"
        )
        return True
    return False


def build_optimizer(model: ToyUNet, flags: AdaptFlags, lr: float) -> SGD:
    params = model.bn_parameters() if flags.freeze_non_bn else model.parameters()
    return SGD(params, lr=lr)


def adapt_step(model: ToyUNet, batch: np.ndarray, schedule: AdaptSchedule, flags: AdaptFlags,
               optimizer: SGD) -> StepReport:
    """
    One AdaptTarget forward, loss, backward and update. Advances `schedule.t` by one.

    Raises:
        ScheduleExhaustedError: t already equals T.
        MissingSourceSnapshotError: a BN layer has no frozen source snapshot.
        InsufficientBatchError: fewer than two target images.
    """
    if schedule.exhausted:
        raise ScheduleExhaustedError(f"schedule exhausted at t={schedule.t} of {schedule.total_iters}")
    if not model.frozen:
        raise MissingSourceSnapshotError("model has no frozen source snapshot; pre-train or load a pretrained checkpoint")
    batch = np.asarray(batch)
    if batch.ndim != 4 or batch.shape[0] < 2:
        raise InsufficientBatchError(f"adaptation needs a batch of at least 2 images, got shape {batch.shape}")

    t = schedule.t
    eta_t = schedule.momentum_now()
    lambda_t = lambda_at(schedule, t) if flags.use_se else 0.0

    model.zero_grad()
    probs = model.forward(Tensor(batch), BNMode.adapt_target(eta_t))

    layers = model.bn_layers()
    distances = [channel_distance(bn.stats, bn.last_batch_mean, bn.last_batch_var) for bn in layers]
    alpha = transferability_weights(distances) if flags.adaptive_channels else uniform_weights(distances)

    loss_hbs = hbs_loss([bn.stats for bn in layers], alpha)
    loss_se = se_loss(probs)
    total = loss_hbs + loss_se.scale(lambda_t) if flags.use_se else loss_hbs
    weighted_se = lambda_t * loss_se.item() if flags.use_se else 0.0

    backward(total)
    optimizer.step()
    schedule.t = t + 1
    model.iterations_target += 1

    fractions = class_fractions(probs.numpy())
    collapse_warning(fractions, t)
    all_d = alpha.distances
    report = StepReport(
        t=t,
        eta_t=float(eta_t),
        lambda_t=float(lambda_t),
        loss_total=total.item(),
        loss_hbs=loss_hbs.item(),
        loss_se=loss_se.item(),
        weighted_se=float(weighted_se),
        mean_d=float(all_d.mean()),
        max_d=float(all_d.max()),
        mean_alpha=float(alpha.weights.mean()),
        min_alpha=float(alpha.weights.min()),
        max_alpha=float(alpha.weights.max()),
        layer_distances=[
            LayerDistance(layer=bn.name, mean_d=float(d.mean()), max_d=float(d.max()))
            for bn, d in zip(layers, distances)
        ],
        class_fractions=fractions,
    )
    logger.debug(
        f"adapt step t={t} eta={eta_t:.4g} lambda={lambda_t:.4g} "
        f"loss={report.loss_total:.6g} hbs={report.loss_hbs:.6g} se={report.loss_se:.6g}"
    )
    publish(EventType.ADAPT_STEP_COMPLETED, "adaptation", report=report)
    return report


def iterate_batches(num_samples: int, batch_size: int, rng: np.random.Generator):
    """Endless seeded passes over the data: a fresh permutation per pass, partial batches under 2 dropped."""
    while True:
        order = rng.permutation(num_samples)
        for start in range(0, num_samples, batch_size):
            indices = order[start:start + batch_size]
            if indices.size >= 2:
                yield indices


def adapt_run(model: ToyUNet, images: np.ndarray, schedule: AdaptSchedule, flags: AdaptFlags,
              lr: float = 1e-3, batch_size: int = 8, seed: int = 0) -> Tuple[ToyUNet, List[StepReport]]:
    """Run the remaining T - t adaptation steps over seeded-shuffled target batches."""
    images = np.asarray(images)
    if images.shape[0] == 0:
        raise EmptyDatasetError("target dataset is empty")
    if not model.frozen:
        raise MissingSourceSnapshotError("model has no frozen source snapshot; pre-train or load a pretrained checkpoint")
    if images.shape[0] < 2 or batch_size < 2:
        raise InsufficientBatchError(
            f"adaptation needs batches of at least 2 images (dataset {images.shape[0]}, batch size {batch_size})"
        )

    optimizer = build_optimizer(model, flags, lr)
    batches = iterate_batches(images.shape[0], batch_size, SeedStreams(seed).shuffle())
    reports: List[StepReport] = []
    logger.info(
        f"🎯 Adapting for {schedule.total_iters - schedule.t} steps "
        f"(adaptive_channels={flags.adaptive_channels}, use_se={flags.use_se}, freeze_non_bn={flags.freeze_non_bn})"
    )
    while not schedule.exhausted:
        indices = next(batches)
        reports.append(adapt_step(model, images[indices], schedule, flags, optimizer))

    final_eta = schedule.momentum_now()
    publish(EventType.ADAPT_COMPLETED, "adaptation", steps=len(reports), final_eta=final_eta)
    if reports:
        logger.info(f"✅ Adaptation finished after {len(reports)} steps (loss {reports[-1].loss_total:.4g}, eta {final_eta:.3g})")
    return model, reports
