"""Alternating optimization of the unary and pairwise models.

Initialization trains both models on the seeds. Each step then retrains
the unary model on the hardened propagated labels, mines confident
superpixels from the new unary output, retrains the pairwise model on the
mined labels and propagates the unary output with it.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import miner, propagation, unary
from .energy import graph_from_gates, mining_inequality_holds, normalized_energy
from .grid import UNKNOWN, extract_features, harden
from .linear import LinearParams, TrainingDiverged
from .metrics import corpus_metrics
from .schedule import LrSchedule
from .superpixel import DEFAULT_MAJORITY, DEFAULT_MIN_SIZE, DEFAULT_SCALE, segment

log = logging.getLogger(__name__)

STAGES = ("seeds", "unary", "mined", "pairwise")


class StageDiverged(RuntimeError):
    """A sub-training diverged; carries the EM step and stage."""

    def __init__(self, step, stage, cause):
        super().__init__(f"step {step}, stage {stage}: {cause}")
        self.step = step
        self.stage = stage


@dataclass(frozen=True)
class RunConfig:
    max_steps: int = 5
    mining_threshold: float = miner.DEFAULT_THRESHOLD
    majority: float = DEFAULT_MAJORITY
    lambda_smooth: float = propagation.DEFAULT_LAMBDA_SMOOTH
    mining: bool = True
    pairwise: bool = True
    # Stop when the pairwise-stage mIoU gains less than this many points;
    # zero disables early stopping.
    early_stop: float = 0.2
    momentum: float = 0.9
    prior_bias: float = 3.0
    prior_edge: float = 1.0
    unary_lr: float = 10.0
    unary_steps: int = 150
    pairwise_lr: float = 5.0
    pairwise_steps: int = 100
    region_lr: float = 10.0
    region_steps: int = 200
    superpixel_scale: float = DEFAULT_SCALE
    superpixel_min_size: int = DEFAULT_MIN_SIZE
    seed: int = 42

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0 < self.mining_threshold < 1:
            raise ValueError("mining_threshold must lie in (0, 1)")
        if not 0 < self.majority < 1:
            raise ValueError("majority must lie in (0, 1)")
        if self.lambda_smooth < 0 or self.early_stop < 0:
            raise ValueError("lambda_smooth and early_stop must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        for name in ("unary", "pairwise", "region"):
            if getattr(self, f"{name}_lr") <= 0 or getattr(self, f"{name}_steps") < 1:
                raise ValueError(f"{name}_lr must be positive and {name}_steps >= 1")

    @property
    def unary_schedule(self):
        return LrSchedule("polynomial", self.unary_lr, self.unary_steps, power=0.9)

    @property
    def pairwise_schedule(self):
        return LrSchedule("polynomial", self.pairwise_lr, self.pairwise_steps, power=0.5)

    @property
    def region_schedule(self):
        step = max(self.region_steps // 2, 1)
        return LrSchedule("step", self.region_lr, self.region_steps, gamma=0.1, step=step)


@dataclass
class Corpus:
    """Equal-sized images with seeds and (optionally) ground truth."""

    images: np.ndarray  # (B, H, W, 3)
    seeds: np.ndarray  # (B, H, W)
    gts: np.ndarray = None  # (B, H, W)
    num_classes: int = 4

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        if self.seeds is None:
            raise ValueError("every image needs a seed map")
        self.seeds = np.asarray(self.seeds, dtype=np.int64)
        if self.images.ndim != 4 or self.seeds.shape != self.images.shape[:3]:
            raise ValueError("images and seeds must be (B, H, W, 3) and (B, H, W)")
        if self.gts is not None:
            self.gts = np.asarray(self.gts, dtype=np.int64)
            if self.gts.shape != self.seeds.shape:
                raise ValueError("ground truth and seeds differ in shape")

    def __len__(self):
        return len(self.images)


@dataclass
class Prepared:
    """Per-image quantities that do not change across EM steps."""

    feats: np.ndarray
    superpixels: list
    region_feats: list


def prepare(corpus, config):
    feats = np.stack([extract_features(im) for im in corpus.images])
    sps = [segment(im, config.superpixel_scale, config.superpixel_min_size) for im in corpus.images]
    region_feats = [miner.region_features(im, sp) for im, sp in zip(corpus.images, sps)]
    return Prepared(feats, sps, region_feats)


@dataclass
class MetricRow:
    step: int
    stage: str
    mean_iou: float
    precision: float
    energy: float = float("nan")


@dataclass
class EmState:
    step: int
    unary: LinearParams
    pairwise: propagation.PairwiseParams
    region: LinearParams = None
    labels: np.ndarray = None  # Y_t, (B, H, W)
    alpha_u: np.ndarray = None
    alpha_p: np.ndarray = None
    gates: np.ndarray = None  # (B, 4, 3, H, W)
    rows: list = field(default_factory=list)
    init_unary: MetricRow = None
    mining_holds: dict = field(default_factory=dict)  # step -> per-image booleans
    stopped_early: bool = False

    def stage_row(self, step, stage):
        for row in self.rows:
            if row.step == step and row.stage == stage:
                return row
        raise KeyError((step, stage))


def _row(step, stage, preds, corpus, energy=float("nan")):
    if corpus.gts is None:
        return MetricRow(step, stage, float("nan"), float("nan"), energy)
    m = corpus_metrics(list(preds), list(corpus.gts), corpus.num_classes)
    return MetricRow(step, stage, m.mean_iou, m.precision, energy)


def _graphs(gates):
    return [graph_from_gates(g) for g in gates]


def corpus_energy(gates, alpha):
    """Mean over images of the normalized Laplacian energy."""
    return float(np.mean([normalized_energy(g, a) for g, a in zip(_graphs(gates), alpha)]))


def _train_unary(params, prep, targets, config, step):
    try:
        params, _ = unary.train_unary(params, prep.feats, targets, config.unary_schedule,
                                      momentum=config.momentum)
    except TrainingDiverged as exc:
        raise StageDiverged(step, "unary", exc) from exc
    return params, unary.predict(params, prep.feats)


def _train_pairwise(params, prep, alpha_u, labels, config, step):
    problem = propagation.PairwiseProblem(prep.feats, alpha_u, labels, prep.superpixels,
                                          config.lambda_smooth, dtype=np.float32)
    try:
        params, _ = propagation.train_pairwise(params, problem, config.pairwise_schedule,
                                               momentum=config.momentum)
    except TrainingDiverged as exc:
        raise StageDiverged(step, "pairwise", exc) from exc
    return params


def _propagate(params, prep, alpha_u, config):
    gates = propagation.compute_gates(params, prep.feats).gates
    if not config.pairwise:
        return gates, alpha_u
    return gates, propagation.propagate(gates, alpha_u)


def _mine(state, prep, corpus, alpha_u, config, step):
    unary_labels = harden(alpha_u)
    if not config.mining:
        return None, unary_labels
    try:
        x, y = miner.build_region_dataset(prep.superpixels, unary_labels, prep.region_feats,
                                          config.majority)
        region, _ = miner.train_region_classifier(x, y, corpus.num_classes,
                                                  config.region_schedule, config.momentum)
    except TrainingDiverged as exc:
        raise StageDiverged(step, "mined", exc) from exc
    mined = np.stack([
        miner.mine_confident(sp, miner.score_regions(region, rf), config.mining_threshold)
        for sp, rf in zip(prep.superpixels, prep.region_feats)
    ])
    return region, mined


def initialize(corpus, config, prep=None):
    """Train the initial models on the seeds; returns the state at step 0."""
    prep = prepare(corpus, config) if prep is None else prep
    if np.all(corpus.seeds == UNKNOWN):
        raise ValueError("seeds hold no labeled pixels")
    state = EmState(0, unary.init_params(corpus.num_classes),
                    propagation.PairwiseParams.edge_prior(config.prior_bias, config.prior_edge))
    state.labels = corpus.seeds.copy()
    state.rows.append(_row(0, "seeds", state.labels, corpus))

    state.unary, state.alpha_u = _train_unary(state.unary, prep, state.labels, config, 0)
    state.init_unary = _row(0, "unary", harden(state.alpha_u), corpus)
    if config.pairwise:
        state.pairwise = _train_pairwise(state.pairwise, prep, state.alpha_u, state.labels,
                                         config, 0)
    state.gates, state.alpha_p = _propagate(state.pairwise, prep, state.alpha_u, config)
    return state


def em_step(state, corpus, config, prep):
    """Advance ``state`` from step t to t + 1 and append three metric rows."""
    t = state.step + 1
    # No-pairwise ablation: the unary learns from the mined labels directly.
    targets = harden(state.alpha_p) if config.pairwise else state.labels
    unary_params, alpha_u = _train_unary(state.unary, prep, targets, config, t)
    state.rows.append(_row(t, "unary", harden(alpha_u), corpus))

    region, labels = _mine(state, prep, corpus, alpha_u, config, t)
    state.rows.append(_row(t, "mined", labels, corpus))

    pairwise = state.pairwise
    if config.pairwise:
        pairwise = _train_pairwise(pairwise, prep, alpha_u, labels, config, t)
    gates, alpha_p = _propagate(pairwise, prep, alpha_u, config)
    state.rows.append(_row(t, "pairwise", harden(alpha_p), corpus, corpus_energy(gates, alpha_p)))

    state.mining_holds[t] = [mining_inequality_holds(g, y, a)[0]
                    for g, y, a in zip(_graphs(gates), labels, alpha_u)]
    state.step = t
    state.unary, state.region, state.pairwise = unary_params, region, pairwise
    state.labels, state.alpha_u, state.alpha_p, state.gates = labels, alpha_u, alpha_p, gates
    return state


def run(corpus, config, prep=None, on_step=None):
    """Initialization plus up to ``config.max_steps`` EM steps."""
    prep = prepare(corpus, config) if prep is None else prep
    state = initialize(corpus, config, prep)
    previous = None
    for _ in range(config.max_steps):
        state = em_step(state, corpus, config, prep)
        current = state.stage_row(state.step, "pairwise").mean_iou
        log.info("step %d: pairwise mIoU %.4f", state.step, current)
        if on_step is not None:
            on_step(state)
        if (config.early_stop > 0 and previous is not None
                and np.isfinite(current) and 100 * (current - previous) < config.early_stop):
            state.stopped_early = True
            break
        previous = current
    return state


def infer(state_or_params, images):
    """Propagated probabilities for new images using fixed parameters.

    Accepts an :class:`EmState` or a ``(unary, pairwise)`` pair; nothing is
    trained.
    """
    if isinstance(state_or_params, EmState):
        u, p = state_or_params.unary, state_or_params.pairwise
    else:
        u, p = state_or_params
    images = np.asarray(images, dtype=float)
    single = images.ndim == 3
    images = images[None] if single else images
    feats = np.stack([extract_features(im) for im in images])
    alpha_u = unary.predict(u, feats)
    alpha_p = propagation.propagate(propagation.compute_gates(p, feats), alpha_u)
    return alpha_p[0] if single else alpha_p


def ablation(config, **changes):
    return replace(config, **changes)
