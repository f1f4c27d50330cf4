from typing import List

import numpy as np
from pydantic import BaseModel

from src.models.segnet import ToyUNet
from src.services.adaptation import channel_distance
from src.services.checkpoint_store import CheckpointMeta, load_checkpoint


class ValueSummary(BaseModel):
    mean: float
    min: float
    max: float

    @classmethod
    def of(cls, values: np.ndarray) -> "ValueSummary":
        values = np.asarray(values, dtype=np.float64)
        return cls(mean=float(values.mean()), min=float(values.min()), max=float(values.max()))


class LayerInspection(BaseModel):
    name: str
    channels: int
    running_mean: ValueSummary
    running_var: ValueSummary
    gamma: ValueSummary
    beta: ValueSummary
    # Per-channel deltas against the stored source snapshot, running stats as the current side.
    distance: List[float]
    gamma_delta: List[float]
    beta_delta: List[float]


class InspectionReport(BaseModel):
    spec_id: str
    phase: str
    seed: int
    iterations_source: int
    iterations_target: int
    total_channels: int
    layers: List[LayerInspection]

    @property
    def max_distance(self) -> float:
        return max((max(layer.distance) for layer in self.layers), default=0.0)

    @property
    def max_gamma_delta(self) -> float:
        return max((max(layer.gamma_delta) for layer in self.layers), default=0.0)

    @property
    def max_beta_delta(self) -> float:
        return max((max(layer.beta_delta) for layer in self.layers), default=0.0)


def inspect_model(model: ToyUNet, meta: CheckpointMeta) -> InspectionReport:
    layers = []
    for bn in model.bn_layers():
        stats = bn.stats
        stats.require_snapshot()
        layers.append(LayerInspection(
            name=bn.name,
            channels=stats.num_channels,
            running_mean=ValueSummary.of(stats.running_mean),
            running_var=ValueSummary.of(stats.running_var),
            gamma=ValueSummary.of(stats.gamma.data),
            beta=ValueSummary.of(stats.beta.data),
            distance=channel_distance(stats, stats.running_mean, stats.running_var).tolist(),
            gamma_delta=np.abs(stats.gamma.data - stats.source_gamma).astype(np.float64).tolist(),
            beta_delta=np.abs(stats.beta.data - stats.source_beta).astype(np.float64).tolist(),
        ))
    return InspectionReport(
        spec_id=meta.spec_id,
        phase=meta.phase,
        seed=meta.seed,
        iterations_source=meta.iterations_source,
        iterations_target=meta.iterations_target,
        total_channels=sum(layer.channels for layer in layers),
        layers=layers,
    )


def inspect_checkpoint(path: str) -> InspectionReport:
    model, meta = load_checkpoint(path)
    return inspect_model(model, meta)
