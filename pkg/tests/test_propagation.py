import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affinity_em.grid import FEATURE_DIM, UNKNOWN
from affinity_em.propagation import (DIFF_SCALE, EPS, PAIR_DIM, AffinityField, PairwiseParams,
                                     PairwiseProblem, affinity_loss, channel_groups, compute_gates,
                                     directional_scan, pair_features, propagate, smoothness_loss,
                                     train_pairwise)
from affinity_em.schedule import LrSchedule


def random_params(rng, scale=0.5):
    return PairwiseParams(scale * rng.standard_normal((4, 3, PAIR_DIM)), rng.standard_normal((4, 3)))


def scan_order(d, h, w):
    """Pixel sequences of every scan line for direction ``d``."""
    if d == 0:
        return [[(r, c) for c in range(w)] for r in range(h)]
    if d == 1:
        return [[(r, c) for c in reversed(range(w))] for r in range(h)]
    if d == 2:
        return [[(r, c) for r in range(h)] for c in range(w)]
    return [[(r, c) for r in reversed(range(h))] for c in range(w)]


def dense_operator(gate, d):
    """N x N matrix of one direction's recurrence, unrolled row by row."""
    h, w = gate.shape
    op = np.zeros((h * w, h * w))
    for line in scan_order(d, h, w):
        prev = None
        for r, c in line:
            i = r * w + c
            if prev is None:
                op[i, i] = 1.0
            else:
                op[i] = gate[r, c] * op[prev]
                op[i, i] += 1.0 - gate[r, c]
            prev = i
    return op


def dense_propagate(gates, alpha):
    h, w, nc = alpha.shape
    out = np.zeros((h * w, nc))
    for ch, k in enumerate(channel_groups(nc)):
        for d in range(4):
            out[:, ch] += dense_operator(gates[d, k], d) @ alpha[..., ch].ravel() / 4
    out /= out.sum(1, keepdims=True)
    return out.reshape(h, w, nc)


def test_zero_params_give_constant_gates(rng):
    g = compute_gates(PairwiseParams.zeros(), rng.random((5, 6, FEATURE_DIM))).gates
    assert np.all(g == (1 - EPS) / 2)


def test_gates_match_reference_pair_features(rng):
    params = random_params(rng, 2.0)
    feats = rng.random((5, 4, FEATURE_DIM))
    g = compute_gates(params, feats).gates
    pf = pair_features(feats)  # (4, H, W, 24)
    z = np.einsum("dhwj,dkj->dkhw", pf, params.weight) + params.bias[:, :, None, None]
    assert np.allclose(g, (1 - EPS) / (1 + np.exp(-z)), atol=1e-12)
    assert np.allclose(pf[0, :, 1:, 16:], DIFF_SCALE * np.abs(feats[:, 1:] - feats[:, :-1]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 50))
@pytest.mark.filterwarnings("ignore:overflow")
def test_gates_stay_in_range(seed, scale):
    rng = np.random.default_rng(seed)
    g = compute_gates(random_params(rng, scale), rng.random((4, 5, FEATURE_DIM))).gates
    assert g.shape == (4, 3, 4, 5)
    assert g.min() >= 0 and g.max() <= 1 - EPS


def test_identical_pairs_share_gates(rng):
    params = random_params(rng)
    feats = rng.random((3, 6, FEATURE_DIM))
    feats[1, 4:6] = feats[0, 1:3]
    feats[:, :, 3:5] = 0.5  # equal coordinates so only content matters
    g = compute_gates(params, feats).gates
    assert np.allclose(g[0, :, 1, 5], g[0, :, 0, 2], atol=1e-15)


def test_different_pairs_change_gates(rng):
    params = random_params(rng)
    feats = np.zeros((1, 3, FEATURE_DIM))
    feats[0, 2] = 1.0
    g = compute_gates(params, feats).gates
    assert np.all(np.abs(g[0, :, 0, 1] - g[0, :, 0, 2]) > 0)


def test_zero_gates_are_identity(rng):
    # Rows with an exact floating-point sum of one come back bit for bit.
    alpha = rng.permuted(np.broadcast_to([0.5, 0.25, 0.125, 0.125], (5, 5, 4)), axis=-1)
    assert np.array_equal(propagate(np.zeros((4, 3, 5, 5)), alpha), alpha)
    alpha = rng.dirichlet(np.ones(4), size=(5, 5))
    assert np.abs(propagate(np.zeros((4, 3, 5, 5)), alpha) - alpha).max() <= 1e-15


def test_three_pixel_row():
    gates = np.zeros((4, 3, 1, 3))
    gates[0, :, 0, 1:] = 1 - EPS
    alpha = np.zeros((1, 3, 3))
    alpha[0, 0] = [1, 0, 0]
    alpha[0, 1:] = [0, 0.5, 0.5]
    h = directional_scan(gates, alpha)[0, 0, :, 0]
    # h1 = (1-g) * 0 + g * 1, h2 = (1-g) * 0 + g * h1
    assert h.tolist() == pytest.approx([1.0, 1 - EPS, (1 - EPS) ** 2], abs=1e-15)
    assert h[2] >= 0.998


def test_matches_dense_unrolled_operator():
    rng = np.random.default_rng(3)
    for _ in range(40):
        h, w = rng.integers(1, 7, size=2)
        nc = int(rng.integers(2, 6))
        gates = rng.random((4, 3, h, w)) * (1 - EPS)
        alpha = rng.dirichlet(np.ones(nc), size=(h, w))
        assert np.abs(propagate(gates, alpha) - dense_propagate(gates, alpha)).max() <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 8), st.integers(2, 6))
def test_output_is_a_probability_grid(seed, h, w, nc):
    rng = np.random.default_rng(seed)
    out = propagate(rng.random((4, 3, h, w)) * (1 - EPS), rng.dirichlet(np.ones(nc), size=(h, w)))
    assert np.all(out >= 0) and np.all(out <= 1)
    assert np.abs(out.sum(-1) - 1).max() <= 1e-6


def test_batched_propagation_matches_per_image(rng):
    gates = rng.random((3, 4, 3, 4, 5)) * 0.9
    alpha = rng.dirichlet(np.ones(3), size=(3, 4, 5))
    batched = propagate(gates, alpha)
    for b in range(3):
        assert np.array_equal(batched[b], propagate(gates[b], alpha[b]))


def test_gate_range_is_checked():
    with pytest.raises(ValueError):
        propagate(np.ones((4, 3, 2, 2)), np.full((2, 2, 2), 0.5))


def test_affinity_loss_examples():
    p = np.zeros((1, 2, 3))
    p[0, 0] = [0, 1, 0]
    p[0, 1] = [0, 0, 1]
    assert affinity_loss(p, np.array([[1, 2]]))[0] == 0.0
    q = np.array([[[np.exp(-1), 1 - np.exp(-1)]]])
    assert affinity_loss(q, np.array([[0]]))[0] == pytest.approx(1.0)
    r = np.array([[[0.5, 0.5], [0.75, 0.25]]])
    assert affinity_loss(r, np.array([[0, 1]]))[0] == pytest.approx((np.log(2) + np.log(4)) / 2)
    assert affinity_loss(r, np.array([[0, 1]]))[0] == pytest.approx(1.0397, abs=1e-4)
    assert affinity_loss(r, np.full((1, 2), UNKNOWN)) == (0.0, True)


def test_smoothness_loss_examples():
    rid = np.zeros((1, 2), dtype=int)
    gates = np.full((4, 3, 1, 2), 0.7)
    assert smoothness_loss(gates, [rid]) == 0.0
    gates[2, 1, 0] = [0.2, 0.4]
    assert smoothness_loss(gates, [rid]) == pytest.approx(2 * 0.1 ** 2 / (2 * 12))


def random_problem(rng, size=6, lam=None, dtype=np.float64):
    feats = rng.random((size, size, FEATURE_DIM))
    nc = int(rng.integers(2, 5))
    alpha = rng.dirichlet(np.ones(nc), size=(size, size))
    labels = rng.integers(0, nc, (size, size))
    labels[rng.random((size, size)) < 0.3] = UNKNOWN
    rid = rng.integers(0, 4, (size, size))
    rid[0, 0], rid[0, 1], rid[0, 2], rid[0, 3] = 0, 1, 2, 3
    lam = rng.uniform(0.05, 2.0) if lam is None else lam
    return PairwiseProblem(feats, alpha, labels, [rid], lam, dtype=dtype)


def total_loss_oracle(problem, params):
    """``L_a + lambda L_s`` from the public reference functions."""
    f = problem.f[0]
    gates = compute_gates(params, f).gates
    la, _ = affinity_loss(propagate(gates, problem.x[0]), problem.labels[0])
    return la + problem.lambda_smooth * smoothness_loss(gates, [problem.rid[0]])


def test_loss_matches_reference_functions(rng):
    problem = random_problem(rng)
    params = random_params(rng)
    assert problem.loss_and_grad(params, need_grad=False)[0] == pytest.approx(
        total_loss_oracle(problem, params), rel=1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    step = 1e-5
    for _ in range(20):
        problem = random_problem(rng)
        params = random_params(rng)
        _, grad = problem.loss_and_grad(params)
        flat = params.flat()
        num = np.zeros_like(flat)
        for i in range(len(flat)):
            vals = []
            for sign in (1, -1):
                f = flat.copy()
                f[i] += sign * step
                vals.append(problem.loss_and_grad(PairwiseParams.from_flat(f), need_grad=False)[0])
            num[i] = (vals[0] - vals[1]) / (2 * step)
        ana = grad.flat()
        assert np.linalg.norm(ana - num) <= 1e-4 * np.linalg.norm(num)


def test_all_unknown_labels_leave_params_unchanged(rng):
    problem = random_problem(rng)
    problem.labels[:] = UNKNOWN
    problem.num_labeled = 0
    params = random_params(rng)
    out, losses = train_pairwise(params, problem, LrSchedule("polynomial", 1.0, 10))
    assert losses == [] and np.array_equal(out.flat(), params.flat())


def test_training_loss_non_increasing_over_50_step_windows(rng):
    problem = random_problem(rng, size=12, lam=0.1)
    _, losses = train_pairwise(PairwiseParams.zeros(), problem, LrSchedule("polynomial", 1.0, 200, power=0.5))
    assert all(losses[k + 50] <= losses[k] for k in range(len(losses) - 50))


def test_smoothness_weight_lowers_region_variance():
    totals = {}
    for lam in (0.0, 1.0):
        problem = random_problem(np.random.default_rng(2), size=10, lam=lam)
        params, _ = train_pairwise(PairwiseParams.zeros(), problem, LrSchedule("polynomial", 2.0, 100))
        gates = compute_gates(params, problem.f[0]).gates
        totals[lam] = smoothness_loss(gates, [problem.rid[0]])
    assert totals[1.0] < totals[0.0]


def test_float32_problem_tracks_float64(rng):
    seed = int(rng.integers(1 << 30))
    p64 = random_problem(np.random.default_rng(seed))
    p32 = random_problem(np.random.default_rng(seed), dtype=np.float32)
    params = random_params(rng)
    l64, g64 = p64.loss_and_grad(params)
    l32, g32 = p32.loss_and_grad(params)
    assert l32 == pytest.approx(l64, rel=1e-4)
    assert np.linalg.norm(g32.flat() - g64.flat()) <= 1e-3 * np.linalg.norm(g64.flat())


def test_params_flat_round_trip_and_names(rng):
    params = random_params(rng)
    again = PairwiseParams.from_flat(params.flat())
    assert np.array_equal(again.weight, params.weight) and np.array_equal(again.bias, params.bias)
    names = [n for n, _ in params.named()]
    assert len(names) == len(set(names)) == 4 * 3 * PAIR_DIM + 12


def test_edge_prior_only_sets_bias_and_color_differences():
    p = PairwiseParams.edge_prior(bias=2.0, edge=0.5)
    assert np.all(p.bias == 2.0)
    diff = p.weight[:, :, 2 * FEATURE_DIM:]
    assert np.all(diff[:, :, [0, 1, 2, 5, 6, 7]] == -0.5)
    assert np.all(diff[:, :, [3, 4]] == 0) and np.all(p.weight[:, :, :2 * FEATURE_DIM] == 0)


def test_affinity_field_exposes_twelve_maps(rng):
    field = AffinityField(rng.random((4, 3, 5, 6)))
    assert field.fields.shape == (12, 5, 6)
    assert np.array_equal(field.fields[4], field.gates[1, 1])
    with pytest.raises(ValueError):
        AffinityField(np.zeros((3, 3, 2, 2)))
