"""mIoU and precision of label maps against ground truth."""

from dataclasses import dataclass, field

import numpy as np

from .grid import UNKNOWN


@dataclass
class Metrics:
    mean_iou: float
    per_class_iou: np.ndarray
    precision: float
    energy: float = float("nan")
    vacuous: bool = False
    labeled_fraction: float = 1.0
    extra: dict = field(default_factory=dict)


def _check_pair(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"dimension mismatch: {pred.shape} vs {gt.shape}")
    if np.any(gt == UNKNOWN):
        raise ValueError("ground truth must not contain UNKNOWN")
    return pred, gt


def iou_counts(pred, gt, num_classes):
    """Per-class (intersection, union) counts.

    UNKNOWN predictions never intersect but their ground-truth pixels still
    enter the union, so they count as wrong for every class.
    """
    pred, gt = _check_pair(pred, gt)
    pred = pred.ravel()
    gt = gt.ravel()
    known = pred != UNKNOWN
    inter = np.bincount(gt[known & (pred == gt)], minlength=num_classes)[:num_classes]
    gt_count = np.bincount(gt, minlength=num_classes)[:num_classes]
    pred_count = np.bincount(pred[known], minlength=num_classes)[:num_classes]
    union = gt_count + pred_count - inter
    return inter.astype(np.int64), union.astype(np.int64), gt_count.astype(np.int64)


def _miou_from_counts(inter, union, gt_count):
    present = gt_count > 0
    iou = np.zeros(len(inter))
    nz = union > 0
    iou[nz] = inter[nz] / union[nz]
    miou = float(iou[present].mean()) if present.any() else 0.0
    return miou, iou


def precision_counts(pred, gt):
    pred, gt = _check_pair(pred, gt)
    known = pred != UNKNOWN
    return int(np.count_nonzero(known & (pred == gt))), int(np.count_nonzero(known))


def precision(pred, gt):
    """Fraction of labeled predictions that match; 1.0 when nothing is labeled."""
    correct, labeled = precision_counts(pred, gt)
    return correct / labeled if labeled else 1.0


def mean_iou(pred, gt, num_classes):
    """Metrics for one prediction; classes absent from ``gt`` are skipped."""
    return corpus_metrics([pred], [gt], num_classes)


def corpus_metrics(preds, gts, num_classes, energy=float("nan")):
    """Pool counts over a corpus (dataset-level mIoU, pooled precision)."""
    inter = np.zeros(num_classes, dtype=np.int64)
    union = np.zeros(num_classes, dtype=np.int64)
    gt_count = np.zeros(num_classes, dtype=np.int64)
    correct = labeled = total = 0
    for pred, gt in zip(preds, gts, strict=True):
        i, u, g = iou_counts(pred, gt, num_classes)
        inter += i
        union += u
        gt_count += g
        c, n = precision_counts(pred, gt)
        correct += c
        labeled += n
        total += np.asarray(gt).size
    miou, iou = _miou_from_counts(inter, union, gt_count)
    return Metrics(
        mean_iou=miou,
        per_class_iou=iou,
        precision=correct / labeled if labeled else 1.0,
        energy=energy,
        vacuous=labeled == 0,
        labeled_fraction=labeled / total if total else 0.0,
    )
