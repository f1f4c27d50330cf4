"""
Overlap and boundary metrics over label maps.

A region is one class id or a union of class ids. Distances are in pixels.
"""
from typing import Iterable, Union

import numpy as np
from scipy.ndimage import distance_transform_edt

from src.domain.errors import ShapeMismatchError

ClassIds = Union[int, Iterable[int]]


def region_mask(labels: np.ndarray, class_ids: ClassIds) -> np.ndarray:
    ids = [int(class_ids)] if np.isscalar(class_ids) else [int(c) for c in class_ids]
    return np.isin(np.asarray(labels), ids)


def _check_shapes(op: str, pred: np.ndarray, truth: np.ndarray) -> None:
    if np.shape(pred) != np.shape(truth):
        raise ShapeMismatchError(op, [np.shape(pred), np.shape(truth)], "prediction and ground truth differ")


def dice(pred: np.ndarray, truth: np.ndarray, class_id: ClassIds) -> float:
    """2|P & T| / (|P| + |T|); 1.0 when both regions are empty."""
    _check_shapes("dice", pred, truth)
    p = region_mask(pred, class_id)
    t = region_mask(truth, class_id)
    total = int(p.sum()) + int(t.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, t).sum()) / total


def image_diagonal(shape) -> float:
    return float(np.sqrt(sum(float(s) ** 2 for s in shape)))


def _directed(source: np.ndarray, target: np.ndarray) -> float:
    # Exact Euclidean distance from every pixel to the nearest target pixel.
    to_target = distance_transform_edt(~target)
    return float(to_target[source].max())


def hausdorff(pred: np.ndarray, truth: np.ndarray, class_id: ClassIds) -> float:
    """
    Symmetric Hausdorff distance between the full foreground pixel sets.
    Both empty gives 0; exactly one empty gives the image diagonal.
    """
    _check_shapes("hausdorff", pred, truth)
    p = region_mask(pred, class_id)
    t = region_mask(truth, class_id)
    has_p, has_t = bool(p.any()), bool(t.any())
    if not has_p and not has_t:
        return 0.0
    if has_p != has_t:
        return image_diagonal(p.shape)
    return max(_directed(p, t), _directed(t, p))
