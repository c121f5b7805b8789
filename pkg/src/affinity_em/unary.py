"""Per-pixel softmax classifier over the hand-crafted features."""

import numpy as np

from .grid import FEATURE_DIM, UNKNOWN, harden
from .linear import LinearParams, fit, predict_proba
from .schedule import LrSchedule

UnaryParams = LinearParams

# Desk-scale default: the published decay shape with K = 500.
DEFAULT_SCHEDULE = LrSchedule("polynomial", base=0.5, max_iter=500, power=0.9)


def init_params(num_classes, dim=FEATURE_DIM):
    return UnaryParams.zeros(num_classes, dim)


def predict(params, feats):
    """Class probabilities of shape ``feats.shape[:-1] + (C,)``."""
    return predict_proba(params, feats)


def supervision_labels(supervision):
    """Hard targets: label grids pass through, probability grids are hardened."""
    supervision = np.asarray(supervision)
    if np.issubdtype(supervision.dtype, np.integer):
        return supervision
    return harden(supervision)


def train_unary(params, feats, supervision, schedule=DEFAULT_SCHEDULE, momentum=0.0):
    """Fit the unary classifier on ``supervision``; returns (params, losses)."""
    labels = supervision_labels(supervision)
    if np.asarray(feats).shape[:-1] != labels.shape:
        raise ValueError("features and supervision cover different pixels")
    if np.all(labels == UNKNOWN):
        raise ValueError("supervision has no labeled pixels")
    return fit(params, feats, labels, schedule, momentum=momentum, what="unary training")
