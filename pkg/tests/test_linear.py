import numpy as np
import pytest

from affinity_em.grid import UNKNOWN, extract_features
from affinity_em.linear import (LinearParams, TrainingDiverged, balanced_weights, fit,
                                loss_and_grad, predict_proba)
from affinity_em.schedule import LrSchedule
from affinity_em.unary import init_params, predict, train_unary


def softmax_oracle(w, b, x):
    z = [sum(w[c, j] * x[j] for j in range(len(x))) + b[c] for c in range(len(b))]
    m = max(z)
    e = [np.exp(v - m) for v in z]
    return np.array(e) / sum(e)


def loss_oracle(w, b, x, y, balanced):
    # Mean (or class-balanced) negative log-likelihood over labeled rows.
    keep = y != UNKNOWN
    x, y = x[keep], y[keep]
    nll = np.array([-np.log(softmax_oracle(w, b, xi)[yi]) for xi, yi in zip(x, y)])
    if not balanced:
        return nll.mean()
    classes = np.unique(y)
    return np.mean([nll[y == c].mean() for c in classes])


def test_zero_params_are_uniform():
    p = predict(init_params(4), np.random.default_rng(0).random((3, 3, 8)))
    assert np.allclose(p, 0.25)


def test_logit_shift_invariance(rng):
    params = LinearParams(rng.standard_normal((3, 8)), rng.standard_normal(3))
    x = rng.random((5, 8))
    shifted = LinearParams(params.weight, params.bias + 7.5)
    assert np.allclose(predict_proba(params, x), predict_proba(shifted, x), atol=1e-12)


def test_matches_straight_line_softmax(rng):
    params = LinearParams(rng.standard_normal((4, 8)), rng.standard_normal(4))
    x = rng.random(8)
    assert np.allclose(predict_proba(params, x[None])[0], softmax_oracle(params.weight, params.bias, x),
                       atol=1e-9)


@pytest.mark.parametrize("balanced", [False, True])
@pytest.mark.parametrize("dim", [8, 9])  # pixel and region classifiers
def test_gradient_matches_finite_differences(balanced, dim):
    rng = np.random.default_rng(dim + 10 * balanced)
    step = 1e-5
    for _ in range(20):
        c = int(rng.integers(2, 5))
        params = LinearParams(rng.standard_normal((c, dim)), rng.standard_normal(c))
        x = rng.random((36, dim))  # one 6x6 instance
        y = rng.integers(0, c, 36)
        y[rng.random(36) < 0.2] = UNKNOWN
        loss, gw, gb, _ = loss_and_grad(params, x, y, balanced=balanced)
        assert loss == pytest.approx(loss_oracle(params.weight, params.bias, x, y, balanced), rel=1e-10)
        flat = np.concatenate([params.weight.ravel(), params.bias])
        num = np.zeros_like(flat)
        for i in range(len(flat)):
            vals = []
            for sign in (1, -1):
                f = flat.copy()
                f[i] += sign * step
                p = LinearParams(f[:c * dim].reshape(c, dim), f[c * dim:])
                vals.append(loss_and_grad(p, x, y, balanced=balanced)[0])
            num[i] = (vals[0] - vals[1]) / (2 * step)
        ana = np.concatenate([gw.ravel(), gb])
        assert np.linalg.norm(ana - num) <= 1e-4 * np.linalg.norm(num)


def test_balanced_weights_equalize_classes():
    y = np.array([0, 0, 0, 1, 2, 2])
    w = balanced_weights(y, 4)
    assert w.sum() == pytest.approx(1.0)
    for c in range(3):
        assert w[y == c].sum() == pytest.approx(1 / 3)


def test_no_labeled_samples_returns_unchanged(rng):
    params = LinearParams(rng.standard_normal((2, 3)), np.zeros(2))
    out, losses = fit(params, rng.random((4, 3)), np.full(4, UNKNOWN), LrSchedule("step", 1, 10))
    assert losses == [] and np.array_equal(out.weight, params.weight)


def test_loss_non_increasing_over_50_step_windows(rng):
    x = rng.random((200, 8))
    y = (x[:, 0] + 0.3 * rng.standard_normal(200) > 0.5).astype(int)
    _, losses = fit(LinearParams.zeros(2, 8), x, y, LrSchedule("polynomial", 0.5, 300, power=0.9))
    assert all(losses[k + 50] <= losses[k] for k in range(len(losses) - 50))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(rng):
    x = rng.random((10, 2)) * 1e200
    with pytest.raises(TrainingDiverged):
        fit(LinearParams.zeros(2, 2), x, np.arange(10) % 2, LrSchedule("step", 1e200, 5))


def test_separable_image_reaches_99_percent():
    img = np.zeros((16, 16, 3))
    img[:, :8] = (0.9, 0.2, 0.2)
    img[:, 8:] = (0.2, 0.2, 0.9)
    gt = np.zeros((16, 16), dtype=int)
    gt[:, 8:] = 1
    feats = extract_features(img)
    params, _ = train_unary(init_params(2), feats, gt, LrSchedule("polynomial", 1.0, 300))
    assert np.mean(predict(params, feats).argmax(-1) == gt) >= 0.99


def test_first_step_on_own_argmax_does_not_increase_loss(rng):
    feats = rng.random((6, 6, 8))
    params = LinearParams(rng.standard_normal((3, 8)), rng.standard_normal(3))
    target = predict(params, feats).argmax(-1)
    _, losses = train_unary(params, feats, target, LrSchedule("polynomial", 0.1, 1))
    assert losses[1] <= losses[0] + 1e-9


def test_probability_supervision_is_hardened(rng):
    feats = rng.random((4, 4, 8))
    probs = rng.dirichlet(np.ones(3), size=(4, 4))
    sched = LrSchedule("polynomial", 0.5, 20)
    a, _ = train_unary(init_params(3), feats, probs, sched)
    b, _ = train_unary(init_params(3), feats, probs.argmax(-1), sched)
    assert np.array_equal(a.weight, b.weight)


def test_all_unknown_supervision_is_an_error(rng):
    with pytest.raises(ValueError):
        train_unary(init_params(2), rng.random((3, 3, 8)), np.full((3, 3), UNKNOWN))
