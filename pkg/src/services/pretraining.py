import logging
from typing import List

import numpy as np
from pydantic import BaseModel, Field

from src.domain.errors import EmptyDatasetError
from src.domain.event import EventType
from src.engine.core.tensor import Tensor, backward
from src.engine.layers.batchnorm import DEFAULT_SOURCE_MOMENTUM, BNMode
from src.engine.optim import SGD
from src.infrastructure.event_bus import publish
from src.infrastructure.rng import SeedStreams
from src.models.segnet import ToyUNet
from src.services.data_synth import SegmentationDataset

logger = logging.getLogger(__name__)

EPS_LOG = 1e-12


class PretrainReport(BaseModel):
    epochs: int
    iterations: int
    epoch_losses: List[float] = Field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


def cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over pixels of -log(p_label + eps)."""
    labels = np.asarray(labels).astype(np.int64)
    num_classes = probs.shape[-1]
    one_hot = np.eye(num_classes, dtype=probs.dtype)[labels]
    pixels = labels.size
    return (Tensor(one_hot) * (probs + EPS_LOG).log()).sum().scale(-1.0 / pixels)


def pretrain_source(model: ToyUNet, dataset: SegmentationDataset, epochs: int, lr: float,
                    batch_size: int = 8, seed: int = 0,
                    source_momentum: float = DEFAULT_SOURCE_MOMENTUM) -> PretrainReport:
    """
    Supervised source training with per-pixel cross-entropy and SGD, BN in TrainSource
    mode; freezes the source snapshot of every BN layer at the end.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("source dataset is empty")
    optimizer = SGD(model.parameters(), lr=lr)
    rng = SeedStreams(seed).shuffle()
    mode = BNMode.train_source(source_momentum)
    report = PretrainReport(epochs=epochs, iterations=0)

    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(dataset), batch_size):
            indices = order[start:start + batch_size]
            model.zero_grad()
            probs = model.forward(Tensor(dataset.images[indices]), mode)
            loss = cross_entropy(probs, dataset.labels[indices])
            backward(loss)
            optimizer.step()
            losses.append(loss.item())
            report.iterations += 1
            logger.debug(f"pretrain epoch={epoch} step={report.iterations} loss={losses[-1]:.6g}")
        mean_loss = float(np.mean(losses))
        report.epoch_losses.append(mean_loss)
        publish(EventType.PRETRAIN_EPOCH_COMPLETED, "pretraining", epoch=epoch, loss=mean_loss)
        logger.info(f"📉 Epoch {epoch + 1}/{epochs}: mean cross-entropy {mean_loss:.4f}")

    model.iterations_source += report.iterations
    model.freeze_source()
    publish(EventType.PRETRAIN_COMPLETED, "pretraining", iterations=report.iterations)
    logger.info(f"✅ Pre-training finished after {report.iterations} iterations; source snapshot frozen")
    return report
