import numpy as np
import pytest

from affinity_em import em
from affinity_em.grid import UNKNOWN, harden
from affinity_em.metrics import corpus_metrics
from affinity_em.propagation import compute_gates, propagate
from affinity_em.unary import predict

from conftest import quick_config, small_corpus


@pytest.fixture(scope="module")
def corpus():
    return small_corpus()


@pytest.fixture(scope="module")
def prep(corpus):
    return em.prepare(corpus, quick_config())


@pytest.fixture(scope="module")
def state(corpus, prep):
    return em.run(corpus, quick_config(), prep)


def test_rows_follow_stage_order(state):
    order = [(r.step, r.stage) for r in state.rows]
    assert order == [(0, "seeds")] + [(t, s) for t in (1, 2) for s in ("unary", "mined", "pairwise")]
    assert state.step == 2 and not state.stopped_early


def test_energy_logged_at_pairwise_stage_only(state):
    for r in state.rows:
        assert np.isfinite(r.energy) == (r.stage == "pairwise")
        if r.stage == "pairwise":
            assert r.energy >= 0


def test_final_state_is_consistent(state, corpus, prep):
    assert np.allclose(state.alpha_u, predict(state.unary, prep.feats))
    gates = compute_gates(state.pairwise, prep.feats).gates
    assert np.array_equal(state.gates, gates)
    assert np.allclose(state.alpha_p, propagate(gates, state.alpha_u))
    assert sorted(state.mining_holds) == [1, 2] and len(state.mining_holds[1]) == len(corpus)


def test_seed_row_matches_direct_metrics(state, corpus):
    m = corpus_metrics(list(corpus.seeds), list(corpus.gts), corpus.num_classes)
    assert state.rows[0].mean_iou == m.mean_iou and state.rows[0].precision == m.precision


def test_ground_truth_seeds_give_strong_initial_unary():
    c = small_corpus(n=8)
    c.seeds = c.gts.copy()
    state = em.initialize(c, em.RunConfig())
    assert state.init_unary.mean_iou >= 0.9


def test_all_unknown_seeds_are_rejected(corpus):
    bad = em.Corpus(corpus.images, np.full_like(corpus.seeds, UNKNOWN), corpus.gts, 4)
    with pytest.raises(ValueError):
        em.initialize(bad, quick_config())


def test_missing_or_misshaped_seeds_are_rejected(corpus):
    with pytest.raises(ValueError):
        em.Corpus(corpus.images, None, corpus.gts)
    with pytest.raises(ValueError):
        em.Corpus(corpus.images, corpus.seeds[:, :5], corpus.gts)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_stage_context(corpus, prep):
    with pytest.raises(em.StageDiverged) as info:
        em.run(corpus, quick_config(unary_lr=1e308), prep)
    assert info.value.step == 0 and info.value.stage == "unary"


def test_no_mining_supervises_with_unary_argmax(corpus, prep):
    state = em.run(corpus, quick_config(max_steps=1, mining=False), prep)
    assert np.array_equal(state.labels, harden(state.alpha_u)) and state.region is None


def test_no_pairwise_skips_propagation(corpus, prep):
    state = em.run(corpus, quick_config(max_steps=1, pairwise=False), prep)
    assert np.array_equal(state.alpha_p, state.alpha_u)
    zero = em.initialize(corpus, quick_config(pairwise=False), prep).pairwise
    assert np.array_equal(state.pairwise.flat(), zero.flat())


def test_early_stopping(corpus, prep):
    state = em.run(corpus, quick_config(max_steps=4, early_stop=1000.0), prep)
    assert state.stopped_early and state.step == 2


def test_runs_are_deterministic(corpus, prep, state):
    again = em.run(corpus, quick_config(), prep)
    assert [vars(r) for r in again.rows] == [vars(r) for r in state.rows]
    assert np.array_equal(again.unary.weight, state.unary.weight)
    assert np.array_equal(again.pairwise.flat(), state.pairwise.flat())


def test_infer_uses_fixed_parameters(state, corpus):
    before = state.pairwise.flat().copy()
    out = em.infer(state, corpus.images[:2])
    single = em.infer((state.unary, state.pairwise), corpus.images[0])
    assert np.allclose(out[0], single) and np.allclose(out, state.alpha_p[:2])
    assert np.array_equal(state.pairwise.flat(), before)


def test_stage_row_lookup(state):
    assert state.stage_row(1, "mined").stage == "mined"
    with pytest.raises(KeyError):
        state.stage_row(9, "unary")


@pytest.mark.parametrize("kwargs", [dict(max_steps=0), dict(mining_threshold=1.0),
                                    dict(momentum=1.0), dict(unary_lr=0), dict(early_stop=-1)])
def test_run_config_validation(kwargs):
    with pytest.raises(ValueError):
        em.RunConfig(**kwargs)


def test_published_defaults():
    cfg = em.RunConfig()
    assert cfg.max_steps == 5 and cfg.mining_threshold == 0.7 and cfg.lambda_smooth == 0.1
    assert cfg.majority == 0.8


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_pairwise_divergence_carries_stage_context(corpus, prep):
    with pytest.raises(em.StageDiverged) as info:
        em.run(corpus, quick_config(pairwise_lr=1e300), prep)
    assert info.value.stage == "pairwise"
