"""Matching distribution built on top of the permutation relaxation.

Rows of the m x m permutation (m = n_s + n_t) list source nodes followed by
n_t source-side dummies; columns list target nodes followed by n_s
target-side dummies. Condensing the dummies gives an (n_s+1) x (n_t+1)
matching matrix whose last row/column hold the aggregate dummy.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .sinkhorn import SinkhornConfig, sample_relaxed_permutation

# score for forbidden dummy slots when dummies are disabled
NO_DUMMY_SCORE = -1e6


def build_phi(theta: Tensor, dummy: bool = True) -> Tensor:
    """Embed ``theta`` (n_s x n_t) top-left in a zero m x m matrix."""
    n_s, n_t = theta.rows, theta.cols
    m = n_s + n_t
    phi = ad.pad_block(theta, m, m)
    if not dummy:
        mask = np.zeros((m, m))
        mask[:n_s, n_t:] = NO_DUMMY_SCORE
        mask[n_s:, :n_t] = NO_DUMMY_SCORE
        phi = ad.add(phi, Tensor(mask))
    return phi


def transform_matrices(n_s: int, n_t: int) -> tuple[np.ndarray, np.ndarray]:
    """Explicit B ((n_s+1) x m) and C (m x (n_t+1)); reference use only."""
    m = n_s + n_t
    b = np.zeros((n_s + 1, m))
    b[:n_s, :n_s] = np.eye(n_s)
    b[n_s, n_s:] = 1.0
    c = np.zeros((m, n_t + 1))
    c[:n_t, :n_t] = np.eye(n_t)
    c[n_t:, n_t] = 1.0
    return b, c


def transform(s: Tensor, n_s: int, n_t: int) -> Tensor:
    """M = B S C by block sums, with the dummy/dummy corner set to 0."""
    m = n_s + n_t
    if s.rows != m or s.cols != m:
        raise ValueError(f"transform: expected {m}x{m} permutation, got {s.shape}")
    core = ad.slice_block(s, 0, n_s, 0, n_t)
    m_t = ad.row_sum(ad.slice_block(s, 0, n_s, n_t, m))
    m_s = ad.col_sum(ad.slice_block(s, n_s, m, 0, n_t))
    out = ad.pad_block(core, n_s + 1, n_t + 1)
    out = ad.add(out, ad.pad_block(m_t, n_s + 1, n_t + 1, 0, n_t))
    return ad.add(out, ad.pad_block(m_s, n_s + 1, n_t + 1, n_s, 0))


def transform_reference(s: np.ndarray, n_s: int, n_t: int) -> np.ndarray:
    b, c = transform_matrices(n_s, n_t)
    out = b @ s @ c
    out[..., n_s, n_t] = 0.0
    return out


def core_block(m: Tensor) -> Tensor:
    """The normal-to-normal block M^0."""
    return ad.slice_block(m, 0, m.rows - 1, 0, m.cols - 1)


def sample_matchings(theta: Tensor, cfg: SinkhornConfig, num_samples: int, seed) -> Tensor:
    """``num_samples`` relaxed matchings, stacked on a leading axis."""
    phi = build_phi(theta, cfg.dummy)
    s = sample_relaxed_permutation(phi, cfg, seed, num_samples)
    return transform(s, theta.rows, theta.cols)


def mean_matching(theta: Tensor, cfg: SinkhornConfig, num_samples: int, seed) -> np.ndarray:
    """Average of ``num_samples`` relaxed matchings; no gradient."""
    if num_samples < 1:
        raise ValueError("need at least one sample")
    samples = sample_matchings(theta.detach(), cfg, num_samples, seed)
    return samples.data.mean(axis=0)


def matched_probabilities(m_bar) -> tuple[np.ndarray, np.ndarray]:
    """Row and column sums of the normal block: P(node matched to a normal node)."""
    m_bar = m_bar.data if isinstance(m_bar, Tensor) else np.asarray(m_bar)
    core = m_bar[:-1, :-1]
    a_s = np.clip(core.sum(axis=1), 0.0, 1.0)
    a_t = np.clip(core.sum(axis=0), 0.0, 1.0)
    return a_s, a_t


def pad_theta(theta) -> np.ndarray:
    t = theta.data if isinstance(theta, Tensor) else np.asarray(theta, dtype=np.float64)
    out = np.zeros((t.shape[0] + 1, t.shape[1] + 1))
    out[:-1, :-1] = t
    return out
