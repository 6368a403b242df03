"""Temperature scaling and expected calibration error.

Temperature scaling divides logits by a fitted positive scalar before the
softmax: calibrated_p = softmax(z / T). The transform is monotone per
pixel, so the argmax (and every segmentation metric derived from it) is
unchanged; only the confidence distribution moves.

The per-class variant fits one scalar per class and, at application time,
selects the scalar by the argmax class of the raw logits (ties broken by
the lowest class index).

ECE pools non-ignored pixels into equal-width confidence bins over [0, 1]:

    ECE = sum_b (|B_b| / N) * |acc(B_b) - conf(B_b)|

The temperature fit minimises the mean negative log-likelihood of the true
class with a golden-section search on ln T over [ln 0.05, ln 20] (NLL is
unimodal in T for fixed logits). Pixels are stride-subsampled to at most
``max_pixels`` in ascending sample order, so results are run-to-run
identical regardless of worker count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EmptyInputError
from .types import LabelMap, LogitStack, ProbStack

DEFAULT_BINS = 15

_LN_T_LO = math.log(0.05)
_LN_T_HI = math.log(20.0)
_LN_T_TOL = 1e-4
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class TemperatureParams:
    """One positive scalar ("scalar" mode) or one per class ("per_class")."""

    mode: str
    values: np.ndarray

    def __post_init__(self):
        if self.mode not in ("scalar", "per_class"):
            raise ValueError(f"mode must be 'scalar' or 'per_class', got {self.mode!r}")
        arr = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        if arr.size < 1:
            raise ValueError("temperature values must be non-empty")
        if self.mode == "scalar" and arr.size != 1:
            raise ValueError("scalar mode takes exactly one value")
        if not np.isfinite(arr).all() or (arr <= 0).any():
            raise ValueError("temperatures must be finite and > 0")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def scalar(cls, t: float) -> "TemperatureParams":
        return cls("scalar", np.array([t], dtype=np.float64))

    @classmethod
    def per_class(cls, values) -> "TemperatureParams":
        return cls("per_class", np.asarray(values, dtype=np.float64))


@dataclass(frozen=True)
class BinStat:
    confidence_mean: float
    accuracy: float
    weight: float


@dataclass(frozen=True)
class EceReport:
    ece: float
    bin_count: int
    per_bin: tuple[BinStat, ...]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z, dtype=np.float32)
    return e / e.sum(axis=-1, keepdims=True)


def apply_temperature(logits: LogitStack, t: TemperatureParams) -> ProbStack:
    """softmax(logits / T); per_class picks T by the raw-logit argmax."""
    data = logits.data
    if t.mode == "scalar":
        scaled = data / np.float32(t.values[0])
    else:
        if t.values.size != logits.num_classes:
            raise ValueError(
                f"per_class needs {logits.num_classes} values, got {t.values.size}"
            )
        chosen = t.values[np.argmax(data, axis=2)].astype(np.float32)
        scaled = data / chosen[:, :, None]
    return ProbStack(_softmax(scaled))


class _EceAccumulator:
    def __init__(self, bins: int):
        if bins < 1:
            raise ValueError(f"bins must be >= 1, got {bins}")
        self.bins = bins
        self.count = np.zeros(bins, dtype=np.int64)
        self.conf_sum = np.zeros(bins, dtype=np.float64)
        self.acc_sum = np.zeros(bins, dtype=np.float64)

    def add(self, probs: ProbStack, gt: LabelMap) -> None:
        if (probs.height, probs.width) != (gt.height, gt.width):
            raise ValueError(
                f"shape mismatch: probs {probs.data.shape[:2]} vs gt {gt.data.shape}"
            )
        valid = gt.data != gt.ignore_id
        if not valid.any():
            return
        conf = probs.data.max(axis=2)[valid].astype(np.float64)
        pred = probs.data.argmax(axis=2)[valid]
        correct = (pred == gt.data[valid]).astype(np.float64)
        idx = np.minimum((conf * self.bins).astype(np.int64), self.bins - 1)
        self.count += np.bincount(idx, minlength=self.bins)
        self.conf_sum += np.bincount(idx, weights=conf, minlength=self.bins)
        self.acc_sum += np.bincount(idx, weights=correct, minlength=self.bins)

    def report(self) -> EceReport:
        n = int(self.count.sum())
        if n == 0:
            raise EmptyInputError("no non-ignored pixels to calibrate against")
        stats = []
        ece = 0.0
        for b in range(self.bins):
            if self.count[b] == 0:
                continue
            weight = self.count[b] / n
            conf_mean = self.conf_sum[b] / self.count[b]
            acc = self.acc_sum[b] / self.count[b]
            ece += weight * abs(acc - conf_mean)
            stats.append(BinStat(float(conf_mean), float(acc), float(weight)))
        return EceReport(float(ece), self.bins, tuple(stats))


def ece(probs: ProbStack, gt: LabelMap, bins: int = DEFAULT_BINS) -> EceReport:
    return ece_pooled([(probs, gt)], bins)


def ece_pooled(
    items: Iterable[tuple[ProbStack, LabelMap]], bins: int = DEFAULT_BINS
) -> EceReport:
    """ECE over pixels pooled across images (ascending sample order is the
    caller's responsibility)."""
    acc = _EceAccumulator(bins)
    for probs, gt in items:
        acc.add(probs, gt)
    return acc.report()


def _chunked_nll(rows: np.ndarray, labels: np.ndarray, t: float) -> float:
    """Mean NLL of the true class at temperature t, fixed chunk order."""
    total = 0.0
    n = rows.shape[0]
    step = 1 << 17
    for start in range(0, n, step):
        z = rows[start : start + step].astype(np.float64) / t
        m = z.max(axis=1)
        lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
        true = z[np.arange(z.shape[0]), labels[start : start + step]]
        total += float((lse - true).sum())
    return total / n


def _golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _fit_scalar_on_pixels(rows: np.ndarray, labels: np.ndarray) -> float:
    u = _golden_section(
        lambda v: _chunked_nll(rows, labels, math.exp(v)), _LN_T_LO, _LN_T_HI, _LN_T_TOL
    )
    t = math.exp(u)
    # Never worsen the objective relative to the identity temperature.
    if _chunked_nll(rows, labels, 1.0) < _chunked_nll(rows, labels, t):
        return 1.0
    return t


def _collect_pixels(
    calibration_set: Sequence, max_pixels: int
) -> tuple[np.ndarray, np.ndarray]:
    """Gather (logit rows, labels) for non-ignored pixels, stride-subsampled
    over the concatenated stream to at most max_pixels.

    Elements may be (LogitStack, LabelMap) pairs or zero-argument loaders
    returning such a pair (loaders are called twice: a counting pass and a
    gather pass, keeping peak memory at one image plus the sample).
    """

    def load(item):
        return item() if callable(item) else item

    counts = []
    for item in calibration_set:
        _, gt = load(item)
        counts.append(int((gt.data != gt.ignore_id).sum()))
    total = sum(counts)
    if total == 0:
        raise EmptyInputError("calibration set has no non-ignored pixels")
    stride = max(1, -(-total // max_pixels))  # ceil division
    rows_parts = []
    label_parts = []
    start = 0
    for item, n_i in zip(calibration_set, counts):
        if n_i == 0:
            continue
        logits, gt = load(item)
        valid = gt.data != gt.ignore_id
        # Global positions [start, start+n_i); keep those on the stride grid.
        first = (-start) % stride
        local = np.arange(first, n_i, stride)
        if local.size:
            rows = logits.data.reshape(-1, logits.num_classes)[valid.reshape(-1)]
            labels = gt.data[valid].astype(np.int64)
            rows_parts.append(rows[local])
            label_parts.append(labels[local])
        start += n_i
    return np.concatenate(rows_parts, axis=0), np.concatenate(label_parts, axis=0)


def fit_temperature(
    calibration_set: Sequence,
    mode: str = "scalar",
    *,
    max_pixels: int = 1 << 20,
) -> TemperatureParams:
    """Fit temperature(s) by minimising mean NLL over the calibration set.

    In per_class mode each class is fitted independently over the pixels
    whose raw argmax is that class; classes with no pixels get T = 1.
    """
    if mode not in ("scalar", "per_class"):
        raise ValueError(f"mode must be 'scalar' or 'per_class', got {mode!r}")
    calibration_set = list(calibration_set)
    if not calibration_set:
        raise EmptyInputError("calibration set is empty")
    rows, labels = _collect_pixels(calibration_set, max_pixels)
    if mode == "scalar":
        return TemperatureParams.scalar(_fit_scalar_on_pixels(rows, labels))
    num_classes = rows.shape[1]
    pred = rows.argmax(axis=1)
    values = np.ones(num_classes, dtype=np.float64)
    for c in range(num_classes):
        sel = pred == c
        if sel.any():
            values[c] = _fit_scalar_on_pixels(rows[sel], labels[sel])
    return TemperatureParams.per_class(values)


def relative_ece_improvement(before: float, after: float) -> float:
    """Percentage decrease of ECE after calibration; negative if it got worse."""
    if before == 0:
        raise ZeroDivisionError("relative improvement undefined for ECE 0")
    if before < 0:
        raise ValueError(f"ECE cannot be negative, got {before}")
    return 100.0 * (before - after) / before
