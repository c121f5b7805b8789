"""Confident-region mining.

Superpixels voted onto a class by the current unary labels train a small
region classifier; the classifier then re-scores every superpixel and only
regions scoring above the threshold keep a label.
"""

from dataclasses import dataclass

import numpy as np

from .grid import UNKNOWN
from .linear import LinearParams, fit, predict_proba
from .schedule import LrSchedule
from .superpixel import DEFAULT_MAJORITY, region_label_vote

REGION_FEATURE_DIM = 9
DEFAULT_THRESHOLD = 0.7
# Desk-scale default: step decay (gamma 0.1) with S scaled from 20k to 250.
DEFAULT_SCHEDULE = LrSchedule("step", base=2.0, max_iter=500, gamma=0.1, step=250)


class EmptyRegionDataset(ValueError):
    """No superpixel passed the majority vote."""


@dataclass
class RegionConfidence:
    scores: np.ndarray  # (R, C), rows sum to 1

    @property
    def predicted(self):
        return self.scores.argmax(axis=1)

    @property
    def max_score(self):
        return self.scores.max(axis=1)


def region_features(image, sp):
    """Per-region mean color, color std, normalized centroid and size: (R, 9)."""
    image = np.asarray(image, dtype=float)
    h, w = sp.shape
    flat = sp.region_id.ravel()
    count = sp.region_count
    sizes = sp.sizes.astype(float)
    pixels = image.reshape(-1, 3)
    mean = sp.mean_color
    sq = np.stack([np.bincount(flat, pixels[:, ch] ** 2, count) for ch in range(3)], 1)
    std = np.sqrt(np.clip(sq / sizes[:, None] - mean ** 2, 0, None))
    rows, cols = np.divmod(np.arange(h * w), w)
    cx = np.bincount(flat, cols, count) / sizes / max(w - 1, 1)
    cy = np.bincount(flat, rows, count) / sizes / max(h - 1, 1)
    return np.column_stack([mean, std, cx, cy, sizes / (h * w)])


def build_region_dataset(sps, unary_labels, feats, majority=DEFAULT_MAJORITY):
    """Training pairs from every region that passes the majority vote.

    ``sps``, ``unary_labels`` and ``feats`` are per-image sequences (feats
    from :func:`region_features`). Returns ``(x, y)`` with one row per kept
    region.
    """
    xs, ys = [], []
    for sp, labels, f in zip(sps, unary_labels, feats, strict=True):
        vote = region_label_vote(sp, labels, majority)
        keep = vote != UNKNOWN
        xs.append(f[keep])
        ys.append(vote[keep])
    x = np.concatenate(xs) if xs else np.zeros((0, REGION_FEATURE_DIM))
    y = np.concatenate(ys) if ys else np.zeros(0, dtype=np.int64)
    if len(y) == 0:
        raise EmptyRegionDataset("no region passed the majority vote; mining step is degenerate")
    return x, y


def train_region_classifier(x, y, num_classes, schedule=DEFAULT_SCHEDULE, momentum=0.0,
                            balanced=True):
    """Fit a fresh softmax classifier on region features; returns (params, losses).

    Background regions vastly outnumber object regions, so by default the
    loss is class balanced.
    """
    params = LinearParams.zeros(num_classes, REGION_FEATURE_DIM)
    return fit(params, x, y, schedule, momentum=momentum,
               what="region classifier training", balanced=balanced)


def score_regions(params, feats):
    return RegionConfidence(predict_proba(params, feats))


def mine_confident(sp, confidence, threshold=DEFAULT_THRESHOLD):
    """Label grid keeping regions whose top score exceeds ``threshold``."""
    num_classes = confidence.scores.shape[1]
    if not 1.0 / num_classes < threshold < 1.0:
        raise ValueError(f"threshold must lie in (1/C, 1), got {threshold}")
    if len(confidence.scores) != sp.region_count:
        raise ValueError("one score row per region is required")
    region_label = np.where(confidence.max_score > threshold, confidence.predicted, UNKNOWN)
    return region_label[sp.region_id]


def write_region_scores(path, confidence):
    """CSV ``region_id,pred_class,score`` with one row per region."""
    with open(path, "w", newline="") as fh:
        fh.write("region_id,pred_class,score\n")
        for r, (cls, score) in enumerate(zip(confidence.predicted, confidence.max_score)):
            fh.write(f"{r},{int(cls)},{float(score)!r}\n")
