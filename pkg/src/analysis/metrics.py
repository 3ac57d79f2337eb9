"""
Evaluation metrics.
Mean IoU for label maps and the standard depth error measures (ARD, RMSE,
RMSE-log, delta accuracy at 1.25).
"""

from dataclasses import asdict, dataclass
from typing import Dict, Iterable, Optional

import numpy as np
import pandas as pd

from src.data_structures.catalog import ClassCatalog
from src.data_structures.grids import DepthMap, LabelGrid
from src.utils.errors import ValidationError

DELTA_THRESHOLD = 1.25


@dataclass(frozen=True)
class IouReport:
    """
    Attributes:
        per_class: IoU per evaluated class id
        mean: Mean over per_class
    """

    per_class: Dict[int, float]
    mean: float

    def to_frame(self, catalog: Optional[ClassCatalog] = None) -> pd.DataFrame:
        rows = [
            {
                "class_id": class_id,
                "name": catalog.name_of(class_id) if catalog else str(class_id),
                "iou": iou,
            }
            for class_id, iou in sorted(self.per_class.items())
        ]
        return pd.DataFrame(rows, columns=["class_id", "name", "iou"])

    def to_dict(self) -> dict:
        return {
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "mean": self.mean,
        }


@dataclass(frozen=True)
class DepthMetricReport:
    """
    Attributes:
        ard: Mean absolute relative difference |p - g| / g
        rmse: Root mean squared error
        rmse_log: Root mean squared error of log depths
        delta_acc: Share of cells with max(p/g, g/p) < 1.25
    """

    ard: float
    rmse: float
    rmse_log: float
    delta_acc: float

    def to_dict(self) -> dict:
        return asdict(self)


def mean_iou(
    pred: LabelGrid,
    gt: LabelGrid,
    eval_classes: Optional[Iterable[int]] = None,
    ignore_label: Optional[int] = None,
    region: Optional[np.ndarray] = None,
) -> IouReport:
    """
    Per-class and mean intersection over union.

    Args:
        pred: Predicted labels
        gt: Ground-truth labels
        eval_classes: Classes to evaluate (default: every label present)
        ignore_label: Cells whose ground truth has this label are skipped
        region: Optional boolean mask restricting evaluation (e.g. hidden cells)

    Returns:
        IouReport; classes absent from both maps are left out of the mean

    Raises:
        ValidationError: If shapes differ or no class can be evaluated
    """
    if pred.shape != gt.shape:
        raise ValidationError(f"Prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = np.ones(gt.shape, dtype=bool)
    if ignore_label is not None:
        valid &= gt.labels != ignore_label
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if region.shape != gt.shape:
            raise ValidationError(f"Region {region.shape} does not match maps {gt.shape}")
        valid &= region

    p = pred.labels[valid]
    g = gt.labels[valid]
    if eval_classes is None:
        classes = np.union1d(np.unique(p), np.unique(g))
        if ignore_label is not None:
            classes = classes[classes != ignore_label]
    else:
        classes = np.asarray(sorted(set(int(c) for c in eval_classes)))

    per_class: Dict[int, float] = {}
    for c in classes:
        in_pred, in_gt = p == c, g == c
        union = int(np.sum(in_pred | in_gt))
        if union == 0:
            continue
        per_class[int(c)] = int(np.sum(in_pred & in_gt)) / union

    if not per_class:
        raise ValidationError("No evaluable class: every class is absent from both maps")
    return IouReport(per_class=per_class, mean=float(np.mean(list(per_class.values()))))


def depth_metrics(
    pred: DepthMap, gt: DepthMap, region: Optional[np.ndarray] = None
) -> DepthMetricReport:
    """
    Depth errors over cells valid in both maps.

    Args:
        pred: Predicted depth
        gt: Ground-truth depth
        region: Optional boolean mask restricting evaluation

    Raises:
        ValidationError: If shapes differ, no cell is jointly valid, or a
                         depth is not positive
    """
    if pred.shape != gt.shape:
        raise ValidationError(f"Prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = pred.valid & gt.valid
    if region is not None:
        valid &= np.asarray(region, dtype=bool)
    if not valid.any():
        raise ValidationError("No jointly valid depth cell")
    p = pred.depth[valid]
    g = gt.depth[valid]
    if np.any(p <= 0) or np.any(g <= 0):
        raise ValidationError("Depths must be positive for the log error")

    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return DepthMetricReport(
        ard=float(np.mean(np.abs(diff) / g)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta_acc=float(np.mean(ratio < DELTA_THRESHOLD)),
    )
