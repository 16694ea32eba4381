"""Matching objectives and their Monte Carlo expectation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import GraphPair
from .matching import core_block, sample_matchings
from .sinkhorn import SinkhornConfig

SUP_EPS = 1e-12
CUSTOM_KERNEL_MAX_NODES = 8


class QapKernel:
    """Quadratic reward K[i, j, i', j'].

    The edge-agreement kernel rewards a matched edge orientation and is kept
    as two adjacency matrices. A dense 4-tensor is accepted for small tests.
    """

    def __init__(self, adj_s: np.ndarray, adj_t: np.ndarray, dense: np.ndarray | None = None):
        self.adj_s = np.asarray(adj_s, dtype=np.float64)
        self.adj_t = np.asarray(adj_t, dtype=np.float64)
        self.dense = None
        if dense is not None:
            n_s, n_t = self.adj_s.shape[0], self.adj_t.shape[0]
            if max(n_s, n_t) > CUSTOM_KERNEL_MAX_NODES:
                raise ValueError(f"dense kernels are limited to {CUSTOM_KERNEL_MAX_NODES} nodes per graph")
            dense = np.asarray(dense, dtype=np.float64)
            if dense.shape != (n_s, n_t, n_s, n_t):
                raise ValueError(f"dense kernel must have shape {(n_s, n_t, n_s, n_t)}, got {dense.shape}")
            self.dense = dense

    @property
    def mode(self) -> str:
        return "edge_agreement" if self.dense is None else "custom"

    @classmethod
    def edge_agreement(cls, pair: GraphPair) -> "QapKernel":
        return cls(pair.source.adjacency, pair.target.adjacency)

    @classmethod
    def custom(cls, dense: np.ndarray) -> "QapKernel":
        n_s, n_t = dense.shape[0], dense.shape[1]
        return cls(np.zeros((n_s, n_s)), np.zeros((n_t, n_t)), dense)

    def shape(self) -> tuple[int, int]:
        return self.adj_s.shape[0], self.adj_t.shape[0]


@dataclass(frozen=True)
class ObjectiveConfig:
    lam: float = 1.0
    supervised: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


def f_qap(m: Tensor, kernel: QapKernel) -> Tensor:
    """QAP reward of each matching; shape (..., 1, 1)."""
    m0 = core_block(m)
    if (m0.rows, m0.cols) != kernel.shape():
        raise ValueError(f"kernel is {kernel.shape()} but matching core is {(m0.rows, m0.cols)}")
    if kernel.dense is None:
        prop = ad.matmul(ad.matmul(Tensor(kernel.adj_s), m0), Tensor(kernel.adj_t))
        return ad.matrix_sum(ad.mul(prop, m0))
    n = m0.rows * m0.cols
    batch = m0.shape[:-2]
    vec = ad.reshape(m0, batch + (1, n))
    kmat = Tensor(kernel.dense.reshape(n, n))
    return ad.matmul(ad.matmul(vec, kmat), ad.transpose(vec))


def _truth_mask(ground_truth, n_s: int, n_t: int) -> np.ndarray:
    mask = np.zeros((n_s, n_t))
    for i, j in ground_truth:
        mask[i, j] = 1.0
    return mask


def f_sup(m: Tensor, ground_truth) -> Tensor:
    """Sum of log-probabilities of the true pairs, floored at log(1e-12)."""
    if ground_truth is None:
        raise ValueError("the supervised objective needs a ground truth")
    m0 = core_block(m)
    mask = _truth_mask(ground_truth, m0.rows, m0.cols)
    logp = ad.log(ad.clamp_min(m0, SUP_EPS))
    return ad.matrix_sum(ad.mul(logp, Tensor(mask)))


def f_combined(m: Tensor, kernel: QapKernel, ground_truth, cfg: ObjectiveConfig) -> Tensor:
    value = f_qap(m, kernel)
    if cfg.supervised:
        if ground_truth is None:
            raise ValueError("supervised objective requested without ground truth")
        if cfg.lam:
            value = ad.add(value, ad.scalar_mul(f_sup(m, ground_truth), cfg.lam))
    return value


def sample_objective(theta: Tensor, sink: SinkhornConfig, kernel: QapKernel, ground_truth,
                     obj: ObjectiveConfig, num_samples: int, seed) -> tuple[Tensor, Tensor]:
    """Mean objective over fresh samples, plus the samples themselves."""
    if num_samples < 1:
        raise ValueError("need at least one sample")
    samples = sample_matchings(theta, sink, num_samples, seed)
    total = ad.reduce_sum(f_combined(samples, kernel, ground_truth, obj))
    return ad.scalar_mul(total, 1.0 / num_samples), samples


def expected_objective(theta: Tensor, sink: SinkhornConfig, kernel: QapKernel, ground_truth,
                       obj: ObjectiveConfig, num_samples: int, seed, track_gradients: bool = False):
    """Monte Carlo estimate of E[f(M)] under the relaxed matching distribution.

    With ``track_gradients`` the returned 1x1 :class:`Tensor` is differentiable
    with respect to ``theta`` (pathwise, noise held fixed); otherwise a float
    is returned.
    """
    if not track_gradients:
        theta = theta.detach()
    value, _ = sample_objective(theta, sink, kernel, ground_truth, obj, num_samples, seed)
    return value if track_gradients else value.item()
