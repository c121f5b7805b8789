"""Label and probability grids plus the hand-crafted per-pixel features.

Grids are plain numpy arrays:

* label grids are integer arrays of shape ``(..., H, W)`` holding a class
  index in ``[0, C)`` or :data:`UNKNOWN`;
* probability grids are float arrays of shape ``(..., H, W, C)``.

Class 0 is always background.
"""

import numpy as np

UNKNOWN = 255
FEATURE_DIM = 8


def check_labels(labels, num_classes):
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("label grid must be integer typed")
    if num_classes < 1 or num_classes >= UNKNOWN:
        raise ValueError(f"num_classes must be in [1, {UNKNOWN}), got {num_classes}")
    bad = (labels != UNKNOWN) & ((labels < 0) | (labels >= num_classes))
    if bad.any():
        raise ValueError("label grid holds values outside [0, C) that are not UNKNOWN")
    return labels


def check_probs(probs, atol=1e-6):
    probs = np.asarray(probs, dtype=float)
    if probs.ndim < 3:
        raise ValueError("probability grid must have shape (..., H, W, C)")
    if not np.all(np.isfinite(probs)):
        raise ValueError("probability grid has non-finite entries")
    if probs.min() < -atol or probs.max() > 1 + atol:
        raise ValueError("probabilities must lie in [0, 1]")
    if np.abs(probs.sum(axis=-1) - 1.0).max() > atol:
        raise ValueError("per-pixel probabilities must sum to 1")
    return probs


def normalize(probs):
    """Rescale each pixel's vector to sum to one."""
    probs = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    total = probs.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("cannot normalize a pixel with zero total mass")
    return probs / total


def one_hot(labels, num_classes):
    """One-hot encode a label grid; UNKNOWN pixels become all-zero rows."""
    labels = check_labels(labels, num_classes)
    out = np.zeros(labels.shape + (num_classes,))
    known = labels != UNKNOWN
    out[known, labels[known]] = 1.0
    return out


def harden(probs):
    """Per-pixel argmax with exact ties mapped to UNKNOWN."""
    probs = np.asarray(probs)
    top = probs.max(axis=-1, keepdims=True)
    ties = (probs == top).sum(axis=-1) > 1
    labels = probs.argmax(axis=-1).astype(np.int64)
    labels[ties] = UNKNOWN
    return labels


def _box_mean3(channel):
    # 3x3 mean over the in-bounds part of the window (clamped window).
    h, w = channel.shape
    padded = np.pad(channel, 1)
    ones = np.pad(np.ones((h, w)), 1)
    total = np.zeros((h, w))
    count = np.zeros((h, w))
    for dy in range(3):
        for dx in range(3):
            total += padded[dy:dy + h, dx:dx + w]
            count += ones[dy:dy + h, dx:dx + w]
    return total / count


def extract_features(image):
    """Return the ``(H, W, 8)`` feature stack for an RGB image in [0, 1].

    Channels are the pixel color, the normalized ``(x, y)`` position and
    the mean color over the 3x3 window clipped to the image.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must have shape (H, W, 3)")
    h, w, _ = image.shape
    if h == 0 or w == 0:
        raise ValueError("image is empty")
    if image.min() < 0 or image.max() > 1:
        raise ValueError("image channels must lie in [0, 1]")
    xs = np.arange(w) / (w - 1) if w > 1 else np.zeros(1)
    ys = np.arange(h) / (h - 1) if h > 1 else np.zeros(1)
    feats = np.empty((h, w, FEATURE_DIM))
    feats[..., :3] = image
    feats[..., 3] = xs[None, :]
    feats[..., 4] = ys[:, None]
    for ch in range(3):
        feats[..., 5 + ch] = _box_mean3(image[..., ch])
    return feats
