"""Multinomial logistic regression trained by full-batch gradient descent.

Shared by the per-pixel unary classifier and the region classifier.
"""

from dataclasses import dataclass

import numpy as np

from .grid import UNKNOWN


class TrainingDiverged(RuntimeError):
    def __init__(self, step, what="training"):
        super().__init__(f"{what} diverged at step {step}")
        self.step = step


@dataclass
class LinearParams:
    weight: np.ndarray  # (C, D)
    bias: np.ndarray  # (C,)

    @classmethod
    def zeros(cls, num_classes, dim):
        return cls(np.zeros((num_classes, dim)), np.zeros(num_classes))

    def copy(self):
        return LinearParams(self.weight.copy(), self.bias.copy())

    def check(self):
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("parameters contain non-finite values")

    def named(self, prefix):
        c, d = self.weight.shape
        rows = [(f"{prefix}.weight[{i},{j}]", self.weight[i, j]) for i in range(c) for j in range(d)]
        rows += [(f"{prefix}.bias[{i}]", self.bias[i]) for i in range(c)]
        return rows


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(params, x):
    params.check()
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.weight.shape[1]:
        raise ValueError(f"feature dim {x.shape[-1]} != model dim {params.weight.shape[1]}")
    return softmax(x @ params.weight.T + params.bias)


def _dense_loss_and_grad(weight, bias, xt, y, w=None):
    # Class-major layout: xt is (D, M) and every column is labeled.
    # ``w`` holds per-sample weights summing to one (uniform when None).
    m = len(y)
    cols = np.arange(m)
    z = weight @ xt
    z += bias[:, None]
    z -= z.max(axis=0)
    np.exp(z, out=z)
    total = z.sum(axis=0)
    nll = np.log(total) - np.log(np.maximum(z[y, cols], 1e-300))
    loss = float(np.mean(nll)) if w is None else float(nll @ w)
    z /= total
    z[y, cols] -= 1.0
    if w is None:
        z /= m
    else:
        z *= w
    return loss, z @ xt.T, z.sum(axis=1)


def balanced_weights(labels, num_classes):
    """Per-sample weights giving every present class equal total mass."""
    counts = np.bincount(labels, minlength=num_classes).astype(float)
    present = np.count_nonzero(counts)
    return 1.0 / (present * counts[labels])


def loss_and_grad(params, x, labels, balanced=False):
    """Mean cross-entropy over non-UNKNOWN samples and its gradient.

    ``x`` is ``(M, D)``, ``labels`` is ``(M,)``. Returns
    ``(loss, grad_weight, grad_bias, count)``; with no labeled samples the
    loss and gradient are zero.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    known = labels != UNKNOWN
    m = int(np.count_nonzero(known))
    if m == 0:
        return 0.0, np.zeros_like(params.weight), np.zeros_like(params.bias), 0
    y = labels[known]
    w = balanced_weights(y, params.weight.shape[0]) if balanced else None
    loss, gw, gb = _dense_loss_and_grad(params.weight, params.bias, x[known].T, y, w)
    return loss, gw, gb, m


def fit(params, x, labels, schedule, steps=None, momentum=0.0, what="training", balanced=False):
    """Gradient descent on the mean cross-entropy; returns (params, losses).

    With ``balanced`` every class present in ``labels`` carries the same
    total weight in the loss.

    ``losses[k]`` is the loss before update ``k``; the last entry is the
    loss of the returned parameters. With no labeled samples the parameters
    come back unchanged.
    """
    x = np.asarray(x, dtype=float).reshape(-1, params.weight.shape[1])
    labels = np.asarray(labels).reshape(-1)
    known = labels != UNKNOWN
    xt, labels = np.ascontiguousarray(x[known].T), labels[known]
    params = params.copy()
    if len(labels) == 0:
        return params, []
    w = balanced_weights(labels, params.weight.shape[0]) if balanced else None
    steps = schedule.max_iter if steps is None else steps
    vw = np.zeros_like(params.weight)
    vb = np.zeros_like(params.bias)
    losses = []
    for k in range(steps + 1):
        loss, gw, gb = _dense_loss_and_grad(params.weight, params.bias, xt, labels, w)
        if not np.isfinite(loss):
            raise TrainingDiverged(k, what)
        losses.append(loss)
        if k == steps:
            break
        lr = schedule.lr_at(k)
        vw = momentum * vw - lr * gw
        vb = momentum * vb - lr * gb
        params.weight += vw
        params.bias += vb
        if not (np.all(np.isfinite(params.weight)) and np.all(np.isfinite(params.bias))):
            raise TrainingDiverged(k + 1, what)
    return params, losses
