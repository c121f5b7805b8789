"""Synthetic corpus: shaded geometric objects on textured backgrounds.

Objects are lit from one side and darken linearly toward the other.
Coarse seeds keep the most interior pixels of each ground-truth region,
which mimics localization maps that fire on the most discriminative part.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import UNKNOWN
from .pnm import read_image, read_labels, write_image, write_labels

# Class 0 is background; rows are RGB in [0, 1].
DEFAULT_PALETTE = (
    (0.45, 0.45, 0.40),
    (0.90, 0.25, 0.20),
    (0.25, 0.80, 0.30),
    (0.25, 0.35, 0.90),
    (0.90, 0.85, 0.25),
    (0.80, 0.30, 0.85),
)
MIN_COLOR_GAP = 0.3
MAX_PLACEMENT_TRIES = 200


class PlacementError(RuntimeError):
    """A shape could not be placed inside the image."""


@dataclass(frozen=True)
class SceneSpec:
    size: int = 64
    num_classes: int = 4
    min_shapes: int = 1
    max_shapes: int = 3
    min_radius: int = 7
    max_radius: int = 16
    colors: tuple = field(default=None)
    noise: float = 1.0
    # Side-to-side darkening and background gradient, in units of ``noise``.
    shading: float = 0.3
    gradient: float = 0.12
    pixel_noise: float = 0.04
    # Spatially correlated color noise (blob width in pixels).
    blotch: float = 0.08
    blotch_scale: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.size < 4 or self.num_classes < 2:
            raise ValueError("need size >= 4 and at least two classes")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ValueError("need 1 <= min_shapes <= max_shapes")
        if not 1 <= self.min_radius <= self.max_radius:
            raise ValueError("need 1 <= min_radius <= max_radius")
        if self.noise < 0:
            raise ValueError("noise amplitude must be non-negative")
        colors = self.palette
        gaps = np.linalg.norm(colors[:, None] - colors[None], axis=-1)
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() < MIN_COLOR_GAP:
            raise ValueError(f"class colors must be at least {MIN_COLOR_GAP} apart")

    @property
    def palette(self):
        colors = DEFAULT_PALETTE if self.colors is None else self.colors
        if len(colors) < self.num_classes:
            raise ValueError(f"{self.num_classes} classes but only {len(colors)} colors")
        return np.asarray(colors[: self.num_classes], dtype=float)


def _shape_mask(kind, cy, cx, ry, rx, size):
    """Boolean footprint of an ellipse or axis-aligned rectangle."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    dy = (yy - cy) / ry
    dx = (xx - cx) / rx
    if kind == "ellipse":
        return dy ** 2 + dx ** 2 <= 1.0
    return np.maximum(np.abs(dy), np.abs(dx)) <= 1.0


def _light_ramp(mask, theta):
    """0 on the lit side of ``mask``, 1 on the far side, linear in between."""
    yy, xx = np.nonzero(mask)
    proj = np.cos(theta) * xx + np.sin(theta) * yy
    lo, hi = proj.min(), proj.max()
    ramp = np.zeros(mask.shape)
    ramp[mask] = (proj - lo) / max(hi - lo, 1e-12)
    return ramp


def _place_shape(rng, spec):
    for _ in range(MAX_PLACEMENT_TRIES):
        ry, rx = rng.integers(spec.min_radius, spec.max_radius + 1, size=2)
        lo_y, hi_y = ry, spec.size - 1 - ry
        lo_x, hi_x = rx, spec.size - 1 - rx
        if lo_y <= hi_y and lo_x <= hi_x:
            cy = rng.integers(lo_y, hi_y + 1)
            cx = rng.integers(lo_x, hi_x + 1)
            return int(cy), int(cx), int(ry), int(rx)
    raise PlacementError(f"could not fit a radius >= {spec.min_radius} shape in a {spec.size}px image")


def _background(rng, spec, color):
    size = spec.size
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy) - 0.5 * (np.cos(theta) + np.sin(theta))
    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), 1.5)
    texture /= max(texture.std(), 1e-12)
    tint = rng.uniform(-1, 1, size=3)
    a = spec.noise
    bg = color + a * spec.gradient * ramp[..., None] * (1 + 0.3 * tint)
    return bg + a * spec.pixel_noise * texture[..., None]


def generate_one(spec, rng):
    """One ``(image, gt)`` pair drawn from ``rng``."""
    colors = spec.palette
    image = _background(rng, spec, colors[0])
    gt = np.zeros((spec.size, spec.size), dtype=np.uint8)
    for _ in range(rng.integers(spec.min_shapes, spec.max_shapes + 1)):
        cls = int(rng.integers(1, spec.num_classes))
        kind = "ellipse" if rng.random() < 0.5 else "rectangle"
        mask = _shape_mask(kind, *_place_shape(rng, spec), spec.size)
        shade = 1.0 - spec.noise * spec.shading * _light_ramp(mask, rng.uniform(0, 2 * np.pi))
        image[mask] = colors[cls] * shade[mask, None]
        gt[mask] = cls
    if spec.noise > 0:
        image += spec.noise * spec.pixel_noise * rng.standard_normal(image.shape)
        if spec.blotch > 0:
            blobs = ndimage.gaussian_filter(rng.standard_normal(image.shape),
                                            (spec.blotch_scale, spec.blotch_scale, 0))
            image += spec.noise * spec.blotch * blobs / max(blobs.std(), 1e-12)
    return np.clip(image, 0.0, 1.0), gt


def generate(spec, n_images):
    """Deterministic corpus of ``n_images`` (image, gt) pairs."""
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    rng = np.random.default_rng(spec.seed)
    return [generate_one(spec, rng) for _ in range(n_images)]


@dataclass
class Seeds:
    labels: np.ndarray
    vanished: tuple  # classes present in gt but absent from the seeds

    @property
    def warning(self):
        return bool(self.vanished)


def make_seeds(gt, erode_radius=2.0, flip_rate=0.0, coverage=1.0, num_classes=None, seed=0):
    """Coarse, partially corrupted seeds from a ground-truth grid.

    Each connected gt region is eroded by ``erode_radius`` (Euclidean
    distance to the region boundary), the ``coverage`` fraction of its
    remaining pixels farthest from the boundary is kept, and each kept
    pixel flips to a random wrong class with probability ``flip_rate``.
    The flip draws are fixed per pixel so that changing the radius or the
    coverage only changes which pixels are kept.
    """
    gt = np.asarray(gt)
    if not 0 < coverage <= 1:
        raise ValueError("coverage must lie in (0, 1]")
    if not 0 <= flip_rate <= 0.3:
        raise ValueError("flip_rate must lie in [0, 0.3]")
    if erode_radius < 0:
        raise ValueError("erode_radius must be non-negative")
    if np.any(gt == UNKNOWN):
        raise ValueError("ground truth must be fully labeled")
    num_classes = int(gt.max()) + 1 if num_classes is None else num_classes
    rng = np.random.default_rng(seed)
    flip_draw = rng.random(gt.shape)
    wrong_offset = rng.integers(1, max(num_classes, 2), size=gt.shape)

    keep = np.zeros(gt.shape, dtype=bool)
    for cls in np.unique(gt):
        comps, n = ndimage.label(gt == cls)
        for comp in range(1, n + 1):
            mask = comps == comp
            # The image border is not a boundary: regions extend past it.
            dist = ndimage.distance_transform_edt(mask)
            idx = np.flatnonzero(mask & (dist > erode_radius))
            if len(idx) == 0:
                continue
            order = np.argsort(-dist.ravel()[idx], kind="stable")
            count = int(np.ceil(coverage * len(idx)))
            keep.ravel()[idx[order[:count]]] = True

    labels = np.full(gt.shape, UNKNOWN, dtype=np.uint8)
    labels[keep] = gt[keep]
    flip = keep & (flip_draw < flip_rate)
    if num_classes > 1:
        labels[flip] = (gt[flip].astype(int) + wrong_offset[flip]) % num_classes
    vanished = tuple(int(c) for c in np.unique(gt) if not np.any(labels == c))
    return Seeds(labels, vanished)


@dataclass(frozen=True)
class SeedSpec:
    erode_radius: float = 2.0
    flip_rate: float = 0.1
    coverage: float = 0.5


def make_corpus(spec, n_images, seed_spec=SeedSpec()):
    """Images, ground truth and seeds as three lists."""
    pairs = generate(spec, n_images)
    images = [p[0] for p in pairs]
    gts = [p[1] for p in pairs]
    seeds = [
        make_seeds(gt, seed_spec.erode_radius, seed_spec.flip_rate, seed_spec.coverage,
                   spec.num_classes, seed=spec.seed * 100_003 + i).labels
        for i, gt in enumerate(gts)
    ]
    return images, gts, seeds


def _corpus_paths(root, i):
    return (os.path.join(root, "img", f"{i:04d}.ppm"),
            os.path.join(root, "gt", f"{i:04d}.pgm"),
            os.path.join(root, "seed", f"{i:04d}.pgm"))


def write_corpus(root, images, gts, seeds):
    for sub in ("img", "gt", "seed"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    for i, (image, gt, seed) in enumerate(zip(images, gts, seeds, strict=True)):
        img_path, gt_path, seed_path = _corpus_paths(root, i)
        write_image(img_path, image)
        write_labels(gt_path, gt)
        write_labels(seed_path, seed)


def read_corpus(root):
    """Inverse of :func:`write_corpus`; images come back quantized to 8 bits."""
    names = sorted(f for f in os.listdir(os.path.join(root, "img")) if f.endswith(".ppm"))
    if not names:
        raise FileNotFoundError(f"no images under {root}/img")
    images, gts, seeds = [], [], []
    for i in range(len(names)):
        img_path, gt_path, seed_path = _corpus_paths(root, i)
        images.append(read_image(img_path))
        gts.append(read_labels(gt_path))
        seeds.append(read_labels(seed_path))
    return images, gts, seeds
