"""Core domain types.

All types are immutable after construction: the wrapped numpy arrays are
flagged read-only, so instances can be shared freely across threads.
Width/height are derived from the array shape; data is row-major.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

VERDICTS = ("accepted", "rejected")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel class ids (uint8) with an ignore label.

    Pixels equal to ``ignore_id`` are excluded from every metric. Values
    are validated against ``num_classes`` at the point of use, since the
    map itself does not know the class count.
    """

    data: np.ndarray
    ignore_id: int = 255

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.uint8)
        if arr.ndim != 2:
            raise ValueError(f"label map must be 2-D, got shape {arr.shape}")
        if not 0 <= self.ignore_id <= 255:
            raise ValueError(f"ignore_id must fit in uint8, got {self.ignore_id}")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class LogitStack:
    """Pre-softmax per-pixel per-class scores, laid out (height, width, class)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] < 1:
            raise ValueError(f"logit stack must be (h, w, c), got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise DataError("logit stack contains non-finite values")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def num_classes(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class ProbStack:
    """Per-pixel class probabilities; same layout as :class:`LogitStack`.

    Each pixel's class vector must sum to 1 within 1e-5.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] < 1:
            raise ValueError(f"prob stack must be (h, w, c), got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise DataError("prob stack contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0 + 1e-6:
            raise DataError("probabilities must lie in [0, 1]")
        sums = arr.sum(axis=2, dtype=np.float64)
        if np.abs(sums - 1.0).max() > 1e-5:
            raise DataError("per-pixel probabilities must sum to 1 within 1e-5")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def num_classes(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class ScoreMap:
    """Per-pixel scalar scores.

    ``higher_is_anomalous`` fixes the polarity convention: True means a
    larger value marks a more anomalous pixel.
    """

    data: np.ndarray
    higher_is_anomalous: bool = True

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"score map must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise DataError("score map contains non-finite values")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Per-pixel boolean mask; dimensions must match the image it annotates."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data)
        if arr.dtype != np.bool_:
            arr = arr.astype(bool)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """n x d matrix of float64 embeddings; n >= 2 so covariance is defined."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"embedding set must be (n, d), got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise ValueError("embedding set needs at least 2 rows")
        if not np.isfinite(arr).all():
            raise DataError("embedding set contains non-finite values")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class CurationRecord:
    """One accept/reject decision for a generated sample."""

    sample_id: str
    verdict: str
    reason_tag: str = ""
    timestamp: float = 0.0

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}, got {self.verdict!r}")

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "verdict": self.verdict,
            "reason_tag": self.reason_tag,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CurationRecord":
        return cls(
            sample_id=str(d["sample_id"]),
            verdict=str(d["verdict"]),
            reason_tag=str(d.get("reason_tag", "")),
            timestamp=float(d.get("timestamp", 0.0)),
        )
