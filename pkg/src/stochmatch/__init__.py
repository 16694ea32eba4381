"""Stochastic graph matching with Gumbel-Sinkhorn relaxations and a GIN encoder.

The ``decode`` and ``sinkhorn`` functions stay in their modules so the
package attributes of those names remain the modules themselves.
"""
from .decode import DUMMY, DiscreteMatching, hard_soft_match, hungarian, node_correctness
from .encoder import EncoderConfig, EncoderWeights, compute_theta, encode, refine_theta
from .graph import Graph, GraphPair, corrupt, generate_ba, load_pair, make_ba_pair, save_pair
from .objectives import ObjectiveConfig, QapKernel, expected_objective, f_qap, f_sup
from .refine import TrainConfig, refine_loop, train
from .sinkhorn import SinkhornConfig, sample_relaxed_permutation

__version__ = "0.1.0"
