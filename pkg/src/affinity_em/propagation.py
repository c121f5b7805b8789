"""Learned four-direction scan-line propagation (the pairwise model).

Gates are produced per pixel and per scan direction by a logistic model on
the features of the pixel, its scan predecessor and their absolute
difference. Each direction runs the recurrence

    h_i = (1 - g_i) * x_i + g_i * h_{i-1}

along every row or column; the four results are averaged and renormalized
per pixel. Class channel ``c`` uses the gates of group ``c % 3``, giving
4 directions x 3 groups = 12 gate fields.

Arrays are batched: features ``(B, H, W, 8)``, probabilities
``(B, H, W, C)``, gates ``(B, 4, 3, H, W)``. Single-image inputs are
accepted by the public functions and returned without the batch axis.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .grid import FEATURE_DIM, UNKNOWN, check_probs
from .linear import TrainingDiverged
from .schedule import LrSchedule

EPS = 1e-3
NUM_DIRECTIONS = 4
NUM_GROUPS = 3
PAIR_DIM = 3 * FEATURE_DIM
DIRECTIONS = ("left_to_right", "right_to_left", "top_to_bottom", "bottom_to_top")

# Neighbor differences are small next to the raw features; scaling them
# keeps the gate model well conditioned under plain gradient descent.
DIFF_SCALE = 10.0

DEFAULT_LAMBDA_SMOOTH = 0.1
# Desk-scale default: the published decay shape (power 0.5) with K = 500.
DEFAULT_SCHEDULE = LrSchedule("polynomial", base=1.0, max_iter=500, power=0.5)


@dataclass
class PairwiseParams:
    weight: np.ndarray  # (4, 3, 24): [pixel | predecessor | |difference|]
    bias: np.ndarray  # (4, 3)

    @classmethod
    def zeros(cls):
        return cls(np.zeros((NUM_DIRECTIONS, NUM_GROUPS, PAIR_DIM)),
                   np.zeros((NUM_DIRECTIONS, NUM_GROUPS)))

    @classmethod
    def edge_prior(cls, bias=3.0, edge=1.0):
        """Gates that stay open on flat color and close across color edges.

        Stands in for a pretrained initialization: only the bias and the
        color-difference weights are set.
        """
        params = cls.zeros()
        params.bias[:] = bias
        params.weight[:, :, 2 * FEATURE_DIM:2 * FEATURE_DIM + 3] = -edge
        params.weight[:, :, 2 * FEATURE_DIM + 5:] = -edge
        return params

    def copy(self):
        return PairwiseParams(self.weight.copy(), self.bias.copy())

    def check(self):
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("pairwise parameters contain non-finite values")

    def flat(self):
        return np.concatenate([self.weight.ravel(), self.bias.ravel()])

    @classmethod
    def from_flat(cls, vec):
        n = NUM_DIRECTIONS * NUM_GROUPS * PAIR_DIM
        return cls(vec[:n].reshape(NUM_DIRECTIONS, NUM_GROUPS, PAIR_DIM).copy(),
                   vec[n:].reshape(NUM_DIRECTIONS, NUM_GROUPS).copy())

    def named(self, prefix="pairwise"):
        rows = []
        for d in range(NUM_DIRECTIONS):
            for k in range(NUM_GROUPS):
                rows += [(f"{prefix}.weight[{d},{k},{j}]", self.weight[d, k, j])
                         for j in range(PAIR_DIM)]
        rows += [(f"{prefix}.bias[{d},{k}]", self.bias[d, k])
                 for d in range(NUM_DIRECTIONS) for k in range(NUM_GROUPS)]
        return rows


@dataclass
class AffinityField:
    gates: np.ndarray  # (..., 4, 3, H, W)

    def __post_init__(self):
        if self.gates.shape[-4:-2] != (NUM_DIRECTIONS, NUM_GROUPS):
            raise ValueError("gates must have shape (..., 4, 3, H, W)")

    @property
    def fields(self):
        """The 12 gate maps, direction-major."""
        return self.gates.reshape(self.gates.shape[:-4] + (12,) + self.gates.shape[-2:])


def channel_groups(num_classes):
    return np.arange(num_classes) % NUM_GROUPS


# ---------------------------------------------------------------- kernels


@njit(cache=True, inline="always")
def _coord(d, line, p, h, w):
    if d == 0:
        return line, p
    if d == 1:
        return line, w - 1 - p
    if d == 2:
        return p, line
    return h - 1 - p, line


@njit(cache=True, inline="always")
def _pred(d, r, c, h, w):
    if d == 0:
        return r, max(c - 1, 0)
    if d == 1:
        return r, min(c + 1, w - 1)
    if d == 2:
        return max(r - 1, 0), c
    return min(r + 1, h - 1), c


@njit(cache=True)
def _gate_logits(fa, fb, hc, vc, bias, out):
    # fa, fb: (B, H, W, 12) pixel / predecessor terms; hc, vc: (B, H, W-1, 6)
    # and (B, H-1, W, 6) absolute-difference terms for the two directions
    # along each axis.
    nb, h, w, _ = fa.shape
    for b in range(nb):
        for r in range(h):
            for c in range(w):
                for d in range(4):
                    pr, pc = _pred(d, r, c, h, w)
                    for k in range(3):
                        j = d * 3 + k
                        z = fa[b, r, c, j] + fb[b, pr, pc, j] + bias[d, k]
                        if d == 0 and c > 0:
                            z += hc[b, r, c - 1, k]
                        elif d == 1 and c < w - 1:
                            z += hc[b, r, c, 3 + k]
                        elif d == 2 and r > 0:
                            z += vc[b, r - 1, c, k]
                        elif d == 3 and r < h - 1:
                            z += vc[b, r, c, 3 + k]
                        out[b, d, k, r, c] = z


@njit(cache=True)
def _scan_forward(gates, x, group, out):
    nb, h, w, nc = x.shape
    prev = np.empty(nc, dtype=x.dtype)
    for b in range(nb):
        for d in range(4):
            lines = h if d < 2 else w
            length = w if d < 2 else h
            for line in range(lines):
                r, c = _coord(d, line, 0, h, w)
                for ch in range(nc):
                    prev[ch] = x[b, r, c, ch]
                    out[b, d, r, c, ch] = prev[ch]
                for p in range(1, length):
                    r, c = _coord(d, line, p, h, w)
                    for ch in range(nc):
                        g = gates[b, d, group[ch], r, c]
                        prev[ch] = (1.0 - g) * x[b, r, c, ch] + g * prev[ch]
                        out[b, d, r, c, ch] = prev[ch]


@njit(cache=True)
def _affinity_terms(hs, labels, unknown, num_labeled):
    # Loss sum of -log p_y and its gradient w.r.t. each directional output.
    nb, nd, h, w, nc = hs.shape
    dh = np.zeros((nb, h, w, nc), dtype=hs.dtype)
    s = np.empty(nc)
    total = 0.0
    for b in range(nb):
        for r in range(h):
            for c in range(w):
                y = labels[b, r, c]
                if y == unknown:
                    continue
                norm = 0.0
                for ch in range(nc):
                    acc = 0.0
                    for d in range(nd):
                        acc += hs[b, d, r, c, ch]
                    s[ch] = acc / nd
                    norm += s[ch]
                py = max(s[y] / norm, 1e-300)
                total -= np.log(py)
                scale = 1.0 / (num_labeled * norm * nd)
                for ch in range(nc):
                    dh[b, r, c, ch] = scale
                dh[b, r, c, y] -= scale / py
    return total, dh


@njit(cache=True)
def _smoothness_terms(gates, rid, num_regions, weight, dgates):
    # Sum of squared deviations from region means; adds weight * d/dg to dgates.
    nb, nd, nk, h, w = gates.shape
    sums = np.zeros((num_regions, nd, nk))
    counts = np.zeros(num_regions)
    for b in range(nb):
        for r in range(h):
            for c in range(w):
                q = rid[b, r, c]
                counts[q] += 1.0
                for d in range(nd):
                    for k in range(nk):
                        sums[q, d, k] += gates[b, d, k, r, c]
    total = 0.0
    for b in range(nb):
        for r in range(h):
            for c in range(w):
                q = rid[b, r, c]
                for d in range(nd):
                    for k in range(nk):
                        dev = gates[b, d, k, r, c] - sums[q, d, k] / counts[q]
                        total += dev * dev
                        dgates[b, d, k, r, c] += 2.0 * weight * dev
    return total


@njit(cache=True)
def _scan_backward(gates, x, hs, dh, group, dgates):
    nb, h, w, nc = x.shape
    carry = np.empty(nc, dtype=x.dtype)
    for b in range(nb):
        for d in range(4):
            lines = h if d < 2 else w
            length = w if d < 2 else h
            for line in range(lines):
                carry[:] = 0.0
                for p in range(length - 1, 0, -1):
                    r, c = _coord(d, line, p, h, w)
                    rp, cp = _coord(d, line, p - 1, h, w)
                    for ch in range(nc):
                        k = group[ch]
                        grad = dh[b, r, c, ch] + carry[ch]
                        g = gates[b, d, k, r, c]
                        dgates[b, d, k, r, c] += grad * (hs[b, d, rp, cp, ch] - x[b, r, c, ch])
                        carry[ch] = grad * g


@njit(cache=True)
def _scatter_logit_grad(dgates, gates, eps, dfa, dfb, dhc, dvc, dbias):
    # Chain through the squash, then route each logit gradient to the terms
    # that produced it.
    nb, _, _, h, w = gates.shape
    for b in range(nb):
        for r in range(h):
            for c in range(w):
                for d in range(4):
                    pr, pc = _pred(d, r, c, h, w)
                    for k in range(3):
                        j = d * 3 + k
                        g = gates[b, d, k, r, c]
                        dz = dgates[b, d, k, r, c] * g * (1.0 - g / (1.0 - eps))
                        dbias[d, k] += dz
                        dfa[b, r, c, j] = dz
                        dfb[b, pr, pc, j] += dz
                        if d == 0 and c > 0:
                            dhc[b, r, c - 1, k] = dz
                        elif d == 1 and c < w - 1:
                            dhc[b, r, c, 3 + k] = dz
                        elif d == 2 and r > 0:
                            dvc[b, r - 1, c, k] = dz
                        elif d == 3 and r < h - 1:
                            dvc[b, r, c, 3 + k] = dz


# ------------------------------------------------------------- public ops


def _batched(arr, ndim):
    arr = np.ascontiguousarray(arr, dtype=float)
    return (arr[None], True) if arr.ndim == ndim else (arr, False)


def _abs_diffs(f):
    s = f.dtype.type(DIFF_SCALE)
    return (np.ascontiguousarray(s * np.abs(f[:, :, 1:] - f[:, :, :-1])),
            np.ascontiguousarray(s * np.abs(f[:, 1:] - f[:, :-1])))


def _split_weight(weight):
    # Column j = 3 * direction + group of each (8, n) block.
    a = weight[:, :, :FEATURE_DIM].reshape(12, FEATURE_DIM).T
    bm = weight[:, :, FEATURE_DIM:2 * FEATURE_DIM].reshape(12, FEATURE_DIM).T
    c = weight[:, :, 2 * FEATURE_DIM:]
    return a, bm, c[:2].reshape(6, FEATURE_DIM).T, c[2:].reshape(6, FEATURE_DIM).T


def _mat(arr, m):
    # (..., 8) @ (8, n) as a single 2-D product.
    return (arr.reshape(-1, arr.shape[-1]) @ m).reshape(arr.shape[:-1] + (m.shape[1],))


def _gates(params, f, dh, dv):
    dtype = f.dtype
    a, bm, ch, cv = (m.astype(dtype) for m in _split_weight(params.weight))
    nb, h, w, _ = f.shape
    z = np.empty((nb, NUM_DIRECTIONS, NUM_GROUPS, h, w), dtype=dtype)
    _gate_logits(_mat(f, a), _mat(f, bm), _mat(dh, ch), _mat(dv, cv),
                 params.bias.astype(dtype), z)
    # (1 - EPS) * sigmoid(z), in place
    np.negative(z, out=z)
    np.exp(z, out=z)
    z += 1.0
    np.divide(dtype.type(1.0 - EPS), z, out=z)
    return z


def pair_features(feats):
    """``(4, H, W, 24)`` gate-model inputs for one image (reference path)."""
    f = np.asarray(feats, dtype=float)
    pred = [np.concatenate([f[:, :1], f[:, :-1]], axis=1),
            np.concatenate([f[:, 1:], f[:, -1:]], axis=1),
            np.concatenate([f[:1], f[:-1]], axis=0),
            np.concatenate([f[1:], f[-1:]], axis=0)]
    return np.stack([np.concatenate([f, p, DIFF_SCALE * np.abs(f - p)], axis=-1) for p in pred])


def compute_gates(params, feats):
    """Gate field for features ``(H, W, 8)`` or ``(B, H, W, 8)``.

    Every gate lies in ``[0, 1 - EPS)``; zero parameters give the constant
    ``(1 - EPS) / 2``.
    """
    params.check()
    f, single = _batched(feats, 3)
    if f.shape[-1] != FEATURE_DIM:
        raise ValueError(f"expected {FEATURE_DIM} features per pixel")
    gates = _gates(params, f, *_abs_diffs(f))
    return AffinityField(gates[0] if single else gates)


def directional_scan(gates, alpha_u):
    """Per-direction recurrence outputs ``(..., 4, H, W, C)`` before fusion."""
    g = gates.gates if isinstance(gates, AffinityField) else np.asarray(gates)
    g, single = _batched(g, 4)
    x, _ = _batched(alpha_u, 3)
    if g.shape[0] != x.shape[0] or g.shape[-2:] != x.shape[1:3]:
        raise ValueError("gate field and probability grid dimensions differ")
    if g.min() < 0 or g.max() >= 1:
        raise ValueError("gates must lie in [0, 1)")
    hs = np.empty((x.shape[0], NUM_DIRECTIONS) + x.shape[1:])
    _scan_forward(g, x, channel_groups(x.shape[-1]), hs)
    return hs[0] if single else hs


def propagate(gates, alpha_u):
    """Refine probabilities with the four-direction scan and renormalize."""
    hs = np.moveaxis(directional_scan(gates, alpha_u), -4, 0)
    # Pairwise sum: exact when the four directions agree (zero gates).
    s = ((hs[0] + hs[1]) + (hs[2] + hs[3])) / 4
    return s / s.sum(axis=-1, keepdims=True)


def affinity_loss(alpha_p, labels):
    """Mean ``-log alpha_p[y]`` over labeled pixels; returns (loss, vacuous)."""
    alpha_p = np.asarray(alpha_p, dtype=float)
    labels = np.asarray(labels)
    if alpha_p.shape[:-1] != labels.shape:
        raise ValueError("probability grid and labels differ in shape")
    known = labels != UNKNOWN
    if not known.any():
        return 0.0, True
    picked = np.take_along_axis(alpha_p, np.where(known, labels, 0)[..., None], -1)[..., 0]
    return float(-np.log(np.maximum(picked[known], 1e-300)).mean()), False


def _global_region_ids(region_maps):
    offset = 0
    out = []
    for rid in region_maps:
        rid = np.asarray(rid, dtype=np.int64)
        out.append(rid + offset)
        offset += int(rid.max()) + 1
    return np.stack(out), offset


def smoothness_loss(gates, sp):
    """Mean squared deviation of each gate field from its superpixel mean."""
    g = gates.gates if isinstance(gates, AffinityField) else np.asarray(gates)
    g, _ = _batched(g, 4)
    maps = [sp] if hasattr(sp, "region_id") or np.ndim(sp) == 2 else sp
    rid, count = _global_region_ids([m.region_id if hasattr(m, "region_id") else m for m in maps])
    if rid.shape[1:] != g.shape[-2:]:
        raise ValueError("superpixel map and gate field dimensions differ")
    total = _smoothness_terms(g, rid, count, 0.0, np.zeros_like(g))
    return total / g.size


class PairwiseProblem:
    """Precomputed training data for the pairwise model over a batch.

    ``region_maps`` is one superpixel map (or region-id array) per image.
    """

    def __init__(self, feats, alpha_u, labels, region_maps,
                 lambda_smooth=DEFAULT_LAMBDA_SMOOTH, dtype=np.float64):
        self.f, _ = _batched(feats, 3)
        self.x, _ = _batched(alpha_u, 3)
        labels = np.asarray(labels, dtype=np.int64)
        self.labels = np.ascontiguousarray(labels[None] if labels.ndim == 2 else labels)
        if self.f.shape[:3] != self.x.shape[:3] or self.x.shape[:3] != self.labels.shape:
            raise ValueError("features, probabilities and labels cover different pixels")
        check_probs(self.x)
        self.f = self.f.astype(dtype)
        self.x = self.x.astype(dtype)
        if hasattr(region_maps, "region_id") or np.ndim(region_maps) == 2:
            region_maps = [region_maps]
        self.rid, self.num_regions = _global_region_ids(
            [m.region_id if hasattr(m, "region_id") else m for m in region_maps])
        if self.rid.shape != self.labels.shape:
            raise ValueError("superpixel maps cover different pixels")
        self.dh, self.dv = _abs_diffs(self.f)
        self.group = channel_groups(self.x.shape[-1])
        self.lambda_smooth = lambda_smooth
        self.num_labeled = int(np.count_nonzero(self.labels != UNKNOWN))

    def loss_and_grad(self, params, need_grad=True):
        """Total loss ``L_a + lambda * L_s`` and its gradient as PairwiseParams."""
        gates = _gates(params, self.f, self.dh, self.dv)
        hs = np.empty((self.x.shape[0], NUM_DIRECTIONS) + self.x.shape[1:], dtype=self.x.dtype)
        _scan_forward(gates, self.x, self.group, hs)
        m = max(self.num_labeled, 1)
        la_sum, dh = _affinity_terms(hs, self.labels, UNKNOWN, m)
        dgates = np.zeros_like(gates)
        ls_sum = _smoothness_terms(gates, self.rid, self.num_regions,
                                   self.lambda_smooth / gates.size, dgates)
        loss = la_sum / m + self.lambda_smooth * ls_sum / gates.size
        if not need_grad:
            return loss, None

        _scan_backward(gates, self.x, hs, dh, self.group, dgates)
        nb, h, w, _ = self.f.shape
        dt = self.f.dtype
        dfa = np.zeros((nb, h, w, 12), dtype=dt)
        dfb = np.zeros((nb, h, w, 12), dtype=dt)
        dhc = np.zeros((nb, h, w - 1, 6), dtype=dt)
        dvc = np.zeros((nb, h - 1, w, 6), dtype=dt)
        dbias = np.zeros((NUM_DIRECTIONS, NUM_GROUPS))
        _scatter_logit_grad(dgates, gates, EPS, dfa, dfb, dhc, dvc, dbias)
        f2 = self.f.reshape(-1, FEATURE_DIM)
        ga = (f2.T @ dfa.reshape(-1, 12)).T.reshape(NUM_DIRECTIONS, NUM_GROUPS, FEATURE_DIM)
        gb = (f2.T @ dfb.reshape(-1, 12)).T.reshape(NUM_DIRECTIONS, NUM_GROUPS, FEATURE_DIM)
        gch = (self.dh.reshape(-1, FEATURE_DIM).T @ dhc.reshape(-1, 6)).T
        gcv = (self.dv.reshape(-1, FEATURE_DIM).T @ dvc.reshape(-1, 6)).T
        gc = np.concatenate([gch.reshape(2, NUM_GROUPS, FEATURE_DIM),
                             gcv.reshape(2, NUM_GROUPS, FEATURE_DIM)])
        weight = np.concatenate([ga, gb, gc], axis=-1).astype(np.float64)
        return loss, PairwiseParams(weight, dbias)


def train_pairwise(params, problem, schedule=DEFAULT_SCHEDULE, steps=None, momentum=0.0):
    """Gradient descent on the pairwise loss; returns (params, losses).

    With no labeled pixels there is nothing to fit and ``params`` is returned
    unchanged.
    """
    params = params.copy()
    if problem.num_labeled == 0:
        return params, []
    steps = schedule.max_iter if steps is None else steps
    vel = PairwiseParams.zeros()
    losses = []
    for k in range(steps + 1):
        loss, grad = problem.loss_and_grad(params, need_grad=k < steps)
        if not np.isfinite(loss):
            raise TrainingDiverged(k, "pairwise training")
        losses.append(loss)
        if k == steps:
            break
        lr = schedule.lr_at(k)
        vel.weight = momentum * vel.weight - lr * grad.weight
        vel.bias = momentum * vel.bias - lr * grad.bias
        params.weight += vel.weight
        params.bias += vel.bias
    return params, losses
