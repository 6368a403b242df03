"""Pixel-level anomaly scoring and detection metrics.

Scores follow one polarity: higher means more anomalous. OOD pixels are
the positive class for FPR95/AUROC (SMIYC convention); AUPR_OUT keeps OOD
positive while AUPR_IN treats in-distribution pixels as positive using
negated scores.

Tie handling is deterministic: pixels are ordered by a stable descending
sort on (score, pixel index), equal scores collapse into one threshold
block, the ROC is integrated trapezoidally and the PR curve step-wise
(precision at recall). FPR95 is the false-positive rate at the first
operating point, sweeping the threshold downward, whose true-positive
rate reaches 0.95.

Dataset-scale evaluation pools pixels across images in ascending
sample_id order; above ``exact_pixel_limit`` it switches to streamed
2^16-bucket quantile histograms so hundreds of 2048x1024 maps fit in
memory, at the cost of bucket-level (rather than value-level) resolution.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, EmptyInputError
from .types import BinaryMask, LogitStack, ProbStack, ScoreMap

HISTOGRAM_BUCKETS = 1 << 16
EXACT_PIXEL_LIMIT = 10**8


@dataclass(frozen=True)
class OodEvalResult:
    fpr95: float
    auroc: float
    aupr_in: float
    aupr_out: float
    n_in: int
    n_out: int


def entropy_score(probs: ProbStack) -> ScoreMap:
    """Per-pixel Shannon entropy -sum_c p_c ln p_c, with 0 ln 0 := 0."""
    p = probs.data.astype(np.float64)
    plogp = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return ScoreMap((-plogp.sum(axis=2)).astype(np.float32), higher_is_anomalous=True)


def maxlogit_score(logits: LogitStack) -> ScoreMap:
    """Negated per-pixel maximum logit, so higher means more anomalous."""
    return ScoreMap(-logits.data.max(axis=2), higher_is_anomalous=True)


def region_mean_score(score: ScoreMap, mask: BinaryMask) -> float:
    if score.data.shape != mask.data.shape:
        raise ValueError(
            f"shape mismatch: score {score.data.shape} vs mask {mask.data.shape}"
        )
    if not mask.data.any():
        raise EmptyInputError("mask selects no pixels")
    return float(score.data[mask.data].astype(np.float64).mean())


def _tie_blocks(scores: np.ndarray, positives: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative (tp, fp) at each distinct threshold, descending score."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = positives[order]
    if s.size == 1:
        ends = np.array([0])
    else:
        ends = np.append(np.nonzero(s[1:] != s[:-1])[0], s.size - 1)
    tp = np.cumsum(y)[ends].astype(np.float64)
    fp = (ends + 1).astype(np.float64) - tp
    return tp, fp


def _average_precision(tp: np.ndarray, fp: np.ndarray, n_pos: float) -> float:
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev) * precision).sum())


def _evaluate_blocks(
    tp: np.ndarray, fp: np.ndarray, tp_neg: np.ndarray, fp_neg: np.ndarray
) -> OodEvalResult:
    n_out = float(tp[-1])
    n_in = float(fp[-1])
    tpr = np.concatenate(([0.0], tp / n_out))
    fpr = np.concatenate(([0.0], fp / n_in))
    auroc = float((np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5).sum())
    feasible = np.nonzero(tpr >= 0.95)[0][0]
    fpr95 = float(fpr[feasible])
    aupr_out = _average_precision(tp, fp, n_out)
    aupr_in = _average_precision(tp_neg, fp_neg, n_in)
    return OodEvalResult(fpr95, auroc, aupr_in, aupr_out, int(n_in), int(n_out))


def _evaluate_scores(scores: np.ndarray, is_ood: np.ndarray) -> OodEvalResult:
    n_out = int(is_ood.sum())
    n_in = scores.size - n_out
    if n_out == 0 or n_in == 0:
        raise DegenerateInputError(
            f"need both classes within the evaluation mask (n_in={n_in}, n_out={n_out})"
        )
    tp, fp = _tie_blocks(scores, is_ood)
    tp_neg, fp_neg = _tie_blocks(-scores, ~is_ood)
    return _evaluate_blocks(tp, fp, tp_neg, fp_neg)


def evaluate_ood(
    score: ScoreMap, ood_mask: BinaryMask, eval_mask: BinaryMask | None = None
) -> OodEvalResult:
    """Detection metrics for one image; see :func:`evaluate_ood_pooled` for
    dataset-level curves."""
    return evaluate_ood_pooled([(score, ood_mask, eval_mask)])


def evaluate_ood_pooled(
    items: Sequence[tuple[ScoreMap, BinaryMask, BinaryMask | None]],
    *,
    exact_pixel_limit: int = EXACT_PIXEL_LIMIT,
    buckets: int = HISTOGRAM_BUCKETS,
) -> OodEvalResult:
    """Metrics over pixels pooled across images (caller orders by sample_id).

    Below ``exact_pixel_limit`` pixels, scores are concatenated and the
    curves are exact; above it, a two-pass streamed histogram with
    ``buckets`` quantile buckets is used (each bucket behaves as one tie
    block).
    """
    items = list(items)
    if not items:
        raise EmptyInputError("no images to evaluate")
    selections = []
    total = 0
    for score, ood_mask, eval_mask in items:
        if score.data.shape != ood_mask.data.shape:
            raise ValueError(
                f"shape mismatch: score {score.data.shape} vs ood mask {ood_mask.data.shape}"
            )
        if eval_mask is not None and eval_mask.data.shape != score.data.shape:
            raise ValueError(
                f"shape mismatch: score {score.data.shape} vs eval mask {eval_mask.data.shape}"
            )
        sel = eval_mask.data if eval_mask is not None else None
        n = score.data.size if sel is None else int(sel.sum())
        selections.append(sel)
        total += n
    if total == 0:
        raise EmptyInputError("evaluation masks select no pixels")

    def selected(i):
        score, ood_mask, _ = items[i]
        sel = selections[i]
        s = score.data if score.higher_is_anomalous else -score.data
        if sel is None:
            return s.reshape(-1), ood_mask.data.reshape(-1)
        return s[sel], ood_mask.data[sel]

    if total <= exact_pixel_limit:
        scores = np.concatenate([selected(i)[0] for i in range(len(items))]).astype(np.float64)
        labels = np.concatenate([selected(i)[1] for i in range(len(items))])
        return _evaluate_scores(scores, labels)
    return _evaluate_streamed(selected, len(items), total, buckets)


def _evaluate_streamed(selected, n_items: int, total: int, buckets: int) -> OodEvalResult:
    # Pass 1: stride-subsample scores to estimate quantile bucket boundaries.
    cap = 1 << 22
    stride = max(1, -(-total // cap))
    sample_parts = []
    offset = 0
    for i in range(n_items):
        s, _ = selected(i)
        first = (-offset) % stride
        sample_parts.append(s[first::stride])
        offset += s.size
    sample = np.sort(np.concatenate(sample_parts).astype(np.float64))
    qs = np.arange(1, buckets) / buckets
    boundaries = np.quantile(sample, qs)
    # Pass 2: per-bucket class counts.
    hist_in = np.zeros(buckets, dtype=np.int64)
    hist_out = np.zeros(buckets, dtype=np.int64)
    for i in range(n_items):
        s, y = selected(i)
        idx = np.searchsorted(boundaries, s.astype(np.float64), side="right")
        hist_out += np.bincount(idx[y], minlength=buckets)
        hist_in += np.bincount(idx[~y], minlength=buckets)
    n_out = int(hist_out.sum())
    n_in = int(hist_in.sum())
    if n_out == 0 or n_in == 0:
        raise DegenerateInputError(
            f"need both classes within the evaluation mask (n_in={n_in}, n_out={n_out})"
        )
    # Descending score order = descending bucket index; each bucket is a block.
    tp = np.cumsum(hist_out[::-1]).astype(np.float64)
    fp = np.cumsum(hist_in[::-1]).astype(np.float64)
    tp_neg = np.cumsum(hist_in).astype(np.float64)
    fp_neg = np.cumsum(hist_out).astype(np.float64)
    return _evaluate_blocks(tp, fp, tp_neg, fp_neg)
