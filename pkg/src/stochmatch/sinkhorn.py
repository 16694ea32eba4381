"""Gumbel-Sinkhorn sampling of relaxed permutation matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

U_CLAMP = 1e-12


@dataclass(frozen=True)
class SinkhornConfig:
    """Relaxation knobs.

    ``noise_scale`` switches Gumbel noise on (1) or off (0). ``dummy=False``
    forbids any assignment to a dummy node by giving those logits a large
    negative score.
    """

    temperature: float = 1.0
    iterations: int = 10
    noise_scale: float = 1.0
    dummy: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.iterations < 1:
            raise ValueError("need at least one Sinkhorn iteration")
        if self.noise_scale not in (0, 1):
            raise ValueError("noise_scale is a 0/1 toggle")

    def replace(self, **kw) -> "SinkhornConfig":
        from dataclasses import replace

        return replace(self, **kw)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_gumbel(shape, seed, noise_scale: float = 1.0) -> np.ndarray:
    """Standard Gumbel draws ``-log(-log(u))`` with ``u`` clamped away from 0 and 1."""
    shape = tuple(shape)
    if noise_scale == 0:
        return np.zeros(shape)
    u = _rng(seed).random(shape)
    u = np.clip(u, U_CLAMP, 1.0 - U_CLAMP)
    return -np.log(-np.log(u))


def sinkhorn(logits: Tensor, iterations: int) -> Tensor:
    """Alternate log-space row/column normalization, then exponentiate."""
    if logits.rows != logits.cols:
        raise ValueError(f"sinkhorn needs square input, got {logits.shape}")
    z = logits
    for _ in range(iterations):
        z = ad.log_normalize(z, axis=-1)
        z = ad.log_normalize(z, axis=-2)
    return ad.exp(z)


def sample_relaxed_permutation(phi: Tensor, cfg: SinkhornConfig, seed, num_samples: int | None = None) -> Tensor:
    """Draw relaxed permutations ``sinkhorn((phi + noise) / tau)``.

    With ``num_samples`` the result carries a leading batch axis of that
    length; the noise is a constant with respect to ``phi``.
    """
    m = phi.rows
    shape = (m, m) if num_samples is None else (num_samples, m, m)
    g = sample_gumbel(shape, seed, cfg.noise_scale)
    logits = ad.add(phi, Tensor(g)) if cfg.noise_scale else phi
    if num_samples is not None and not cfg.noise_scale:
        logits = ad.add(logits, Tensor(np.zeros(shape)))
    return sinkhorn(ad.scalar_mul(logits, 1.0 / cfg.temperature), cfg.iterations)


def entropy(s: np.ndarray) -> float:
    p = np.asarray(s, dtype=np.float64).ravel()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())
