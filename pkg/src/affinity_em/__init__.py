"""Iterative affinity learning for weakly supervised pixel labeling.

An EM-style loop alternates a per-pixel softmax classifier (unary model)
and a learned scan-line propagation (pairwise model), with confident
superpixel mining in between. See the README for the module map.
"""

from .em import Corpus, EmState, RunConfig, infer, initialize, em_step, run
from .grid import UNKNOWN

__all__ = ["Corpus", "EmState", "RunConfig", "UNKNOWN", "em_step", "infer", "initialize", "run"]
__version__ = "0.1.0"
