import logging
from typing import Dict, List, Sequence

import numpy as np
from pydantic import BaseModel

from src.domain.errors import EmptyDatasetError, ShapeMismatchError
from src.domain.event import EventType
from src.domain.scene import REGIONS
from src.infrastructure.atomic_file import atomic_write
from src.infrastructure.event_bus import publish
from src.models.segnet import ToyUNet
from src.services.data_synth import SegmentationDataset
from src.services.metrics import dice, hausdorff

logger = logging.getLogger(__name__)

OVERALL = "Overall"
CSV_HEADER = "region,dice,dice_std,hausdorff,hausdorff_std"
COMPARISON_HEADER = (
    "method,dice_WholeT,dice_EnhT,dice_CoreT,dice_Overall,dice_Overall_std,"
    "hd_WholeT,hd_EnhT,hd_CoreT,hd_Overall,hd_Overall_std"
)


class RegionScore(BaseModel):
    region: str
    dice: float
    dice_std: float
    hausdorff: float
    hausdorff_std: float


class EvaluationTable(BaseModel):
    """Per-region mean/std over samples, plus Overall (per-sample mean over regions)."""
    num_samples: int
    rows: List[RegionScore]

    def row(self, region: str) -> RegionScore:
        for row in self.rows:
            if row.region == region:
                return row
        raise KeyError(region)

    @property
    def overall(self) -> RegionScore:
        return self.row(OVERALL)

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for row in self.rows:
            lines.append(",".join([row.region] + [repr(float(v)) for v in
                                                  (row.dice, row.dice_std, row.hausdorff, row.hausdorff_std)]))
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str) -> None:
        atomic_write(path, self.to_csv())
        logger.info(f"💾 Wrote metrics table to {path}")

    def comparison_row(self, method: str) -> str:
        regions = list(REGIONS)
        values = [self.row(r).dice for r in regions] + [self.overall.dice, self.overall.dice_std]
        values += [self.row(r).hausdorff for r in regions] + [self.overall.hausdorff, self.overall.hausdorff_std]
        return ",".join([method] + [repr(float(v)) for v in values])


def _score(values: Sequence[float]) -> tuple:
    array = np.asarray(values, dtype=np.float64)
    return float(array.mean()), float(array.std())


def evaluate_predictions(predictions: np.ndarray, truths: np.ndarray) -> EvaluationTable:
    """Score label maps (N, H, W) against ground truth of the same shape."""
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape:
        raise ShapeMismatchError("evaluate", [predictions.shape, truths.shape], "prediction and ground truth differ")
    if predictions.shape[0] == 0:
        raise EmptyDatasetError("cannot evaluate an empty dataset")

    per_region: Dict[str, Dict[str, List[float]]] = {
        name: {"dice": [], "hausdorff": []} for name in REGIONS
    }
    for pred, truth in zip(predictions, truths):
        for name, ids in REGIONS.items():
            per_region[name]["dice"].append(dice(pred, truth, ids))
            per_region[name]["hausdorff"].append(hausdorff(pred, truth, ids))

    rows = []
    for name in REGIONS:
        dice_mean, dice_std = _score(per_region[name]["dice"])
        hd_mean, hd_std = _score(per_region[name]["hausdorff"])
        rows.append(RegionScore(region=name, dice=dice_mean, dice_std=dice_std,
                                hausdorff=hd_mean, hausdorff_std=hd_std))

    overall_dice = np.mean([per_region[name]["dice"] for name in REGIONS], axis=0)
    overall_hd = np.mean([per_region[name]["hausdorff"] for name in REGIONS], axis=0)
    dice_mean, dice_std = _score(overall_dice)
    hd_mean, hd_std = _score(overall_hd)
    rows.append(RegionScore(region=OVERALL, dice=dice_mean, dice_std=dice_std,
                            hausdorff=hd_mean, hausdorff_std=hd_std))
    return EvaluationTable(num_samples=int(predictions.shape[0]), rows=rows)


def evaluate(model: ToyUNet, dataset: SegmentationDataset, batch_size: int = 16) -> EvaluationTable:
    """Eval-mode inference over the dataset, then per-region Dice/Hausdorff."""
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot evaluate an empty dataset")
    predictions = model.predict_labels(dataset.images, batch_size=batch_size)
    table = evaluate_predictions(predictions, dataset.labels)
    publish(EventType.EVALUATION_COMPLETED, "evaluation",
            samples=table.num_samples, dice=table.overall.dice, hausdorff=table.overall.hausdorff)
    logger.info(f"📊 Evaluated {table.num_samples} samples: overall Dice {table.overall.dice:.4f}, "
                f"Hausdorff {table.overall.hausdorff:.2f} px")
    return table
