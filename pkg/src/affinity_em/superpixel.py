"""Graph-based superpixels (Felzenszwalb-Huttenlocher) and region label voting."""

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import UNKNOWN
from .pnm import write_pnm

DEFAULT_SCALE = 100.0
DEFAULT_MIN_SIZE = 16
DEFAULT_MAJORITY = 0.8


@dataclass(frozen=True)
class SuperpixelMap:
    region_id: np.ndarray
    region_count: int
    sizes: np.ndarray
    mean_color: np.ndarray

    @property
    def shape(self):
        return self.region_id.shape

    @cached_property
    def members(self):
        """Flat pixel indices of every region, in raster order."""
        flat = self.region_id.ravel()
        order = np.argsort(flat, kind="stable")
        return np.split(order, np.cumsum(self.sizes)[:-1])

    @classmethod
    def from_ids(cls, region_id, image):
        region_id = np.asarray(region_id, dtype=np.int64)
        count = int(region_id.max()) + 1
        flat = region_id.ravel()
        sizes = np.bincount(flat, minlength=count)
        pixels = np.asarray(image, dtype=float).reshape(-1, 3)
        mean = np.stack([np.bincount(flat, pixels[:, ch], count) for ch in range(3)], 1)
        return cls(region_id, count, sizes, mean / sizes[:, None])


def grid_edges(image):
    """4-neighbor edges in lexicographic (row, col, direction) order.

    Direction 0 links a pixel to its right neighbor, direction 1 to the one
    below. Weights are Euclidean RGB distances on the 0-255 scale.
    """
    img = np.asarray(image, dtype=float) * 255.0
    h, w, _ = img.shape
    idx = np.arange(h * w).reshape(h, w)
    a = np.full((h, w, 2), -1)
    b = np.full((h, w, 2), -1)
    wt = np.full((h, w, 2), np.inf)
    a[:, :-1, 0] = idx[:, :-1]
    b[:, :-1, 0] = idx[:, 1:]
    wt[:, :-1, 0] = np.sqrt(((img[:, 1:] - img[:, :-1]) ** 2).sum(-1))
    a[:-1, :, 1] = idx[:-1, :]
    b[:-1, :, 1] = idx[1:, :]
    wt[:-1, :, 1] = np.sqrt(((img[1:] - img[:-1]) ** 2).sum(-1))
    a, b, wt = a.ravel(), b.ravel(), wt.ravel()
    valid = a >= 0
    return a[valid], b[valid], wt[valid]


def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


def segment(image, scale_k=DEFAULT_SCALE, min_size=DEFAULT_MIN_SIZE):
    """Segment an RGB image in [0, 1] into 4-connected superpixels.

    Edges are processed by increasing weight (stable on the lexicographic
    edge order); two components merge when the edge weight is at most
    ``Int(C) + scale_k / |C|`` for both. A second pass over the same order
    absorbs components smaller than ``min_size``.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise ValueError("image must have shape (H, W, 3)")
    if scale_k <= 0 or min_size < 1:
        raise ValueError("scale_k must be > 0 and min_size >= 1")
    h, w, _ = image.shape
    n = h * w
    a, b, wt = grid_edges(image)
    order = np.argsort(wt, kind="stable")
    a, b, wt = a[order].tolist(), b[order].tolist(), wt[order].tolist()

    parent = list(range(n))
    size = [1] * n
    thresh = [scale_k] * n
    for u, v, weight in zip(a, b, wt):
        ru, rv = _find(parent, u), _find(parent, v)
        if ru != rv and weight <= thresh[ru] and weight <= thresh[rv]:
            if size[ru] < size[rv]:
                ru, rv = rv, ru
            parent[rv] = ru
            size[ru] += size[rv]
            thresh[ru] = weight + scale_k / size[ru]
    for u, v in zip(a, b):
        ru, rv = _find(parent, u), _find(parent, v)
        if ru != rv and (size[ru] < min_size or size[rv] < min_size):
            if size[ru] < size[rv]:
                ru, rv = rv, ru
            parent[rv] = ru
            size[ru] += size[rv]

    roots = np.array([_find(parent, i) for i in range(n)])
    return SuperpixelMap.from_ids(relabel_raster(roots).reshape(h, w), image)


def relabel_raster(ids):
    """Map arbitrary ids to 0..K-1 in order of first raster appearance."""
    ids = np.asarray(ids).ravel()
    _, first, inverse = np.unique(ids, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse]


def region_label_vote(sp, labels, majority=DEFAULT_MAJORITY):
    """Per-region class when strictly more than ``majority`` of its pixels agree.

    Returns an integer array of length ``region_count`` holding the class or
    UNKNOWN. UNKNOWN pixels count toward the region size but never vote.
    """
    labels = np.asarray(labels)
    if labels.shape != sp.shape:
        raise ValueError(f"dimension mismatch: {labels.shape} vs {sp.shape}")
    if not 0.5 < majority <= 1.0:
        raise ValueError("majority must lie in (0.5, 1]")
    flat_ids = sp.region_id.ravel()
    flat = labels.ravel()
    known = flat != UNKNOWN
    num_classes = int(flat[known].max()) + 1 if known.any() else 1
    counts = np.zeros((sp.region_count, num_classes), dtype=np.int64)
    np.add.at(counts, (flat_ids[known], flat[known]), 1)
    best = counts.argmax(axis=1)
    frac = counts[np.arange(sp.region_count), best] / sp.sizes
    return np.where(frac > majority, best, UNKNOWN).astype(np.int64)


def save_superpixels(sp, pgm_path, csv_path):
    write_pnm(pgm_path, (sp.region_id % 256).astype(np.uint8))
    with open(csv_path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["region_id", "size", "mean_r", "mean_g", "mean_b"])
        for r in range(sp.region_count):
            out.writerow([r, int(sp.sizes[r]), *(repr(float(v)) for v in sp.mean_color[r])])

