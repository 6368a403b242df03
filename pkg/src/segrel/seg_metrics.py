"""Confusion-matrix accumulation and IoU / mIoU.

``counts[g][p]`` is the number of non-ignored pixels with ground truth g
predicted as p; the matrix is the sufficient statistic for IoU. Merging is
an element-wise integer sum, so image sets may be reduced in any order and
partition, with bit-identical results.

Classes with zero union (absent from both prediction and ground truth) are
undefined and excluded from the mIoU mean rather than counted as 0,
matching the standard Cityscapes benchmark convention. Pixels whose ground
truth equals the ignore label contribute nothing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, UndefinedResultError
from .types import LabelMap

CITYSCAPES_CLASSES = (
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
)


def class_names(num_classes: int) -> tuple[str, ...]:
    """Cityscapes trainId names when the count matches, else class_<i>."""
    if num_classes == len(CITYSCAPES_CLASSES):
        return CITYSCAPES_CLASSES
    return tuple(f"class_{i:02d}" for i in range(num_classes))


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.counts, dtype=np.uint64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.uint64))


def accumulate(
    pred: LabelMap, gt: LabelMap, num_classes: int, ignore_id: int | None = None
) -> ConfusionMatrix:
    """Confusion counts for one prediction/ground-truth pair.

    Predictions must use real class ids (< num_classes) everywhere, even on
    ignored pixels; ground truth may use ignore_id.
    """
    if ignore_id is None:
        ignore_id = gt.ignore_id
    if pred.data.shape != gt.data.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.data.shape} vs gt {gt.data.shape}"
        )
    p = pred.data.reshape(-1).astype(np.int64)
    g = gt.data.reshape(-1).astype(np.int64)
    if p.size and int(p.max()) >= num_classes:
        raise DataError(
            f"prediction contains class id {int(p.max())} >= num_classes {num_classes}"
        )
    valid = g != ignore_id
    g = g[valid]
    p = p[valid]
    if g.size and int(g.max()) >= num_classes:
        raise DataError(
            f"ground truth contains class id {int(g.max())} >= num_classes {num_classes}"
        )
    counts = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes).astype(np.uint64))


def merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    if a.num_classes != b.num_classes:
        raise ValueError(f"size mismatch: {a.num_classes} vs {b.num_classes}")
    return ConfusionMatrix(a.counts + b.counts)


def merge_all(matrices) -> ConfusionMatrix:
    matrices = list(matrices)
    if not matrices:
        raise ValueError("nothing to merge")
    out = matrices[0]
    for m in matrices[1:]:
        out = merge(out, m)
    return out


def iou_per_class(cm: ConfusionMatrix) -> list[tuple[int, float | None]]:
    """Per-class IoU; classes with zero union are reported as None."""
    counts = cm.counts.astype(np.float64)
    diag = np.diag(counts)
    union = counts.sum(axis=0) + counts.sum(axis=1) - diag
    out: list[tuple[int, float | None]] = []
    for c in range(cm.num_classes):
        if union[c] > 0:
            out.append((c, float(diag[c] / union[c])))
        else:
            out.append((c, None))
    return out


def miou(cm: ConfusionMatrix) -> float:
    defined = [v for _, v in iou_per_class(cm) if v is not None]
    if not defined:
        raise UndefinedResultError("every class has zero union; mIoU is undefined")
    return float(np.mean(defined))
