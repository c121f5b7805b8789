"""Graph-Laplacian energy on the 4-neighbor pixel grid.

For symmetric non-negative weights ``w_ij`` the quadratic form of
``L = D - W`` is ``a^T L a = sum over edges w_ij (a_i - a_j)^2``; every
function here works on that edge-sum form so no N x N matrix is built.
"""

import math
from dataclasses import dataclass

import numpy as np

from .grid import UNKNOWN


@dataclass(frozen=True)
class AffinityGraph:
    """Edge weights of a grid graph.

    ``horizontal[r, c]`` links (r, c) with (r, c+1); ``vertical[r, c]``
    links (r, c) with (r+1, c).
    """

    horizontal: np.ndarray
    vertical: np.ndarray

    def __post_init__(self):
        h, w1 = self.horizontal.shape
        h1, w = self.vertical.shape
        if h1 != h - 1 or w1 != w - 1:
            raise ValueError("horizontal/vertical weight shapes do not describe one grid")
        if self.horizontal.min(initial=0) < 0 or self.vertical.min(initial=0) < 0:
            raise ValueError("edge weights must be non-negative")

    @property
    def shape(self):
        return self.vertical.shape[0] + 1, self.horizontal.shape[1] + 1

    def degree(self):
        d = np.zeros(self.shape)
        d[:, :-1] += self.horizontal
        d[:, 1:] += self.horizontal
        d[:-1, :] += self.vertical
        d[1:, :] += self.vertical
        return d

    def scaled(self, s):
        return AffinityGraph(self.horizontal * s, self.vertical * s)


def graph_from_gates(gates):
    """Symmetrize directional gates into one undirected graph.

    ``gates`` has shape ``(4, G, H, W)`` with directions ordered
    left->right, right->left, top->bottom, bottom->top. The weight of an
    edge is the mean of the two gates that couple its endpoints, averaged
    over the channel groups.
    """
    g = np.asarray(gates, dtype=float).mean(axis=1)
    horizontal = 0.5 * (g[0][:, 1:] + g[1][:, :-1])
    vertical = 0.5 * (g[2][1:, :] + g[3][:-1, :])
    return AffinityGraph(np.clip(horizontal, 0, None), np.clip(vertical, 0, None))


def _as_channels(alpha, shape):
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim == 2:
        alpha = alpha[..., None]
    if alpha.shape[:2] != tuple(shape):
        raise ValueError(f"size mismatch: field {alpha.shape[:2]} vs graph {tuple(shape)}")
    return alpha


def bilinear(graph, left, right):
    """``sum_c left_c^T L right_c`` via compensated summation over edges."""
    left = _as_channels(left, graph.shape)
    right = _as_channels(right, graph.shape)
    if left.shape != right.shape:
        raise ValueError("size mismatch between the two fields")
    dlh = left[:, 1:] - left[:, :-1]
    drh = right[:, 1:] - right[:, :-1]
    dlv = left[1:] - left[:-1]
    drv = right[1:] - right[:-1]
    terms_h = graph.horizontal[..., None] * dlh * drh
    terms_v = graph.vertical[..., None] * dlv * drv
    return math.fsum(np.concatenate([terms_h.ravel(), terms_v.ravel()]))


def laplacian_quadratic(graph, alpha):
    """``sum_c alpha_c^T (D - W) alpha_c``; always >= 0."""
    return max(bilinear(graph, alpha, alpha), 0.0)


def laplacian_apply(graph, alpha):
    """``L alpha`` per channel, as ``sum_j w_ij (alpha_i - alpha_j)``.

    The difference form makes the result exactly zero on constant fields.
    """
    alpha = _as_channels(alpha, graph.shape)
    out = np.zeros_like(alpha)
    dh = graph.horizontal[..., None] * (alpha[:, :-1] - alpha[:, 1:])
    dv = graph.vertical[..., None] * (alpha[:-1] - alpha[1:])
    out[:, :-1] += dh
    out[:, 1:] -= dh
    out[:-1] += dv
    out[1:] -= dv
    return out


def energy_gradient(graph, alpha):
    """Gradient of the quadratic form: ``2 L alpha`` (the factor 2 is kept)."""
    return 2.0 * laplacian_apply(graph, alpha)


def normalized_energy(graph, alpha):
    """Energy divided by ``N * C`` so values are comparable across sizes."""
    alpha = _as_channels(alpha, graph.shape)
    return laplacian_quadratic(graph, alpha) / alpha.size


def unknown_to_alpha(labels, alpha_u):
    """One-hot labels with UNKNOWN pixels replaced by the unary probabilities."""
    alpha_u = np.asarray(alpha_u, dtype=float)
    labels = np.asarray(labels)
    y = alpha_u.copy()
    known = labels != UNKNOWN
    y[known] = 0.0
    y[known, labels[known]] = 1.0
    return y


def mining_inequality_holds(graph, labels, alpha_u):
    """Check ``Y^T L a <= a^T L a`` for mined labels ``Y`` and unary output ``a``.

    Returns ``(holds, lhs, rhs)``. UNKNOWN rows of ``Y`` take the matching
    rows of ``a`` so unlabeled pixels are energy-neutral.
    """
    y = unknown_to_alpha(labels, alpha_u)
    lhs = bilinear(graph, y, alpha_u)
    rhs = laplacian_quadratic(graph, alpha_u)
    return lhs <= rhs, lhs, rhs
