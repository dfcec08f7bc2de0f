"""Confusion-matrix statistics and segmentation quality metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricReport:
    dsc: float
    acc: float
    sen: float
    iou: float
    degenerate: bool = False

    def as_dict(self):
        return {"DSC": self.dsc, "ACC": self.acc, "SEN": self.sen, "IOU": self.iou}


def confusion(pred, gt, threshold=0.5):
    """Binarize pred at threshold (>= counts as foreground) and tally cells."""
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    y = gt.data if isinstance(gt, Tensor) else np.asarray(gt)
    if p.shape != y.shape:
        raise ShapeError(f"confusion: shapes differ, {p.shape} vs {y.shape}")
    pb = p >= threshold
    yb = y >= 0.5
    tp = int(np.count_nonzero(pb & yb))
    tn = int(np.count_nonzero(~pb & ~yb))
    fp = int(np.count_nonzero(pb & ~yb))
    fn = int(np.count_nonzero(~pb & yb))
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def compute_metrics(c: ConfusionCounts) -> MetricReport:
    """Dice, accuracy, sensitivity, and IoU from confusion counts.

    Both masks empty -> all four are 1.0 with the degeneracy flag set;
    empty ground truth with a non-empty prediction reports SEN as 0,
    also flagged.
    """
    gt_empty = c.tp + c.fn == 0
    pred_empty = c.tp + c.fp == 0
    if gt_empty and pred_empty:
        return MetricReport(1.0, 1.0, 1.0, 1.0, degenerate=True)
    acc = (c.tp + c.tn) / c.total
    dsc = 2 * c.tp / (2 * c.tp + c.fp + c.fn)
    iou = c.tp / (c.tp + c.fp + c.fn)
    if gt_empty:
        return MetricReport(dsc, acc, 0.0, iou, degenerate=True)
    sen = c.tp / (c.tp + c.fn)
    return MetricReport(dsc, acc, sen, iou)


def evaluate_pairs(pairs, threshold=0.5, average="macro"):
    """Aggregate metrics over (pred, gt) pairs.

    macro: compute per image then average; micro: pool confusion counts
    across all images first.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no prediction/ground-truth pairs to evaluate")
    if average == "macro":
        reports = [compute_metrics(confusion(p, y, threshold)) for p, y in pairs]
        return MetricReport(
            dsc=float(np.mean([r.dsc for r in reports])),
            acc=float(np.mean([r.acc for r in reports])),
            sen=float(np.mean([r.sen for r in reports])),
            iou=float(np.mean([r.iou for r in reports])),
            degenerate=any(r.degenerate for r in reports),
        )
    if average == "micro":
        cells = np.zeros(4, dtype=np.int64)
        for p, y in pairs:
            c = confusion(p, y, threshold)
            cells += (c.tp, c.tn, c.fp, c.fn)
        return compute_metrics(ConfusionCounts(*[int(v) for v in cells]))
    raise ValueError(f"unknown average mode {average!r}")
