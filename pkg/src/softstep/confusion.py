"""Per-sample confusion-matrix memberships and batch-level counts.

Hard counts threshold each prediction (ties to the positive class) and
partition the batch into TP/FP/FN/TN. Soft counts replace the threshold
with a step surrogate so each sample contributes a weight in [0, 1] to
every cell, which makes the counts differentiable in the predictions.

The soft branch conditions are applied exactly as defined, e.g. a sample
contributes surrogate(p) to soft TP whenever its label is positive OR its
prediction falls below the threshold. One consequence is a small positive
soft-TP contribution from confidently-rejected negatives; the four soft
values of one sample also do not generally sum to 1. Both behaviors are
intentional and covered by tests.

Gradients are taken with respect to predictions only; the threshold is a
constant of the loss, never trained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heaviside import heaviside_exact


@dataclass(frozen=True)
class LabeledBatch:
    """Predictions in [0,1] paired with binary labels, equal lengths >= 1."""

    predictions: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        preds = np.asarray(self.predictions, dtype=float)
        labels = np.asarray(self.labels, dtype=float)
        if preds.ndim != 1 or labels.ndim != 1:
            raise ValueError("predictions and labels must be 1-D arrays")
        if len(preds) != len(labels):
            raise ValueError(
                f"length mismatch: {len(preds)} predictions, {len(labels)} labels")
        if len(preds) == 0:
            raise ValueError("batch must contain at least one sample")
        if not np.all(np.isfinite(preds)):
            raise ValueError("predictions must be finite")
        if preds.min() < 0.0 or preds.max() > 1.0:
            raise ValueError("predictions must lie in [0, 1]")
        if not np.all((labels == 0.0) | (labels == 1.0)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "predictions", preds)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return len(self.predictions)


@dataclass(frozen=True)
class SoftCounts:
    tp: float
    fp: float
    fn: float
    tn: float


@dataclass(frozen=True)
class HardCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class SoftCountGrads:
    """Per-sample d(count)/d(prediction_i), one array per confusion cell."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray


def _branch_masks(preds, labels, tau):
    positive = labels == 1.0
    below = preds < tau
    return positive, below


def _soft_memberships(preds, labels, approx):
    """Vectorized per-sample soft weights (tp, fp, fn, tn)."""
    h = np.asarray(approx.value(preds))
    positive, below = _branch_masks(preds, labels, approx.tau)
    tp = np.where(positive | below, h, 1.0 - h)
    fp = np.where(~positive | below, h, 1.0 - h)
    fn = np.where(positive | ~below, 1.0 - h, h)
    tn = np.where(~positive | ~below, 1.0 - h, h)
    return tp, fp, fn, tn


def _single(p, y, approx, index):
    batch = LabeledBatch(np.array([p], dtype=float), np.array([y], dtype=float))
    return float(_soft_memberships(batch.predictions, batch.labels, approx)[index][0])


def tp_soft(p, y, approx) -> float:
    """Soft true-positive weight: surrogate(p) if y=1 or p<tau, else 1-surrogate(p)."""
    return _single(p, y, approx, 0)


def fp_soft(p, y, approx) -> float:
    return _single(p, y, approx, 1)


def fn_soft(p, y, approx) -> float:
    return _single(p, y, approx, 2)


def tn_soft(p, y, approx) -> float:
    return _single(p, y, approx, 3)


def aggregate_soft(batch: LabeledBatch, approx) -> SoftCounts:
    """Sum per-sample soft memberships over the batch."""
    tp, fp, fn, tn = _soft_memberships(batch.predictions, batch.labels, approx)
    return SoftCounts(tp=float(np.sum(tp)), fp=float(np.sum(fp)),
                      fn=float(np.sum(fn)), tn=float(np.sum(tn)))


def aggregate_soft_grad(batch: LabeledBatch, approx) -> SoftCountGrads:
    """d(soft count)/d(p_i) for every sample and every confusion cell.

    Each entry is +surrogate'(p_i) on a surrogate branch and -surrogate'(p_i)
    on a complement branch, mirroring the membership case tables.
    """
    g = np.asarray(approx.grad(batch.predictions))
    positive, below = _branch_masks(batch.predictions, batch.labels, approx.tau)
    return SoftCountGrads(
        tp=np.where(positive | below, g, -g),
        fp=np.where(~positive | below, g, -g),
        fn=np.where(positive | ~below, -g, g),
        tn=np.where(~positive | ~below, -g, g),
    )


def aggregate_hard(batch: LabeledBatch, tau: float) -> HardCounts:
    """Threshold predictions at tau (ties positive) and count the partition."""
    predicted = np.asarray(heaviside_exact(batch.predictions, tau)) == 1.0
    positive = batch.labels == 1.0
    return HardCounts(
        tp=int(np.sum(positive & predicted)),
        fp=int(np.sum(~positive & predicted)),
        fn=int(np.sum(positive & ~predicted)),
        tn=int(np.sum(~positive & ~predicted)),
    )
