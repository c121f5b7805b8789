import numpy as np
import pytest

from affinity_em import em
from affinity_em.synth import SceneSpec, SeedSpec, make_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_corpus(n=6, size=24, seed=7, seed_spec=SeedSpec()):
    spec = SceneSpec(size=size, min_radius=4, max_radius=8, seed=seed)
    images, gts, seeds = make_corpus(spec, n, seed_spec)
    return em.Corpus(np.stack(images), np.stack(seeds), np.stack(gts), spec.num_classes)


def quick_config(**changes):
    base = em.RunConfig(max_steps=2, early_stop=0.0, unary_steps=40, pairwise_steps=15,
                        region_steps=40)
    return em.ablation(base, **changes)


# One line per acceptance criterion, printed after the run.
CRITERIA = []


def record(label, passed, detail):
    CRITERIA.append(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
