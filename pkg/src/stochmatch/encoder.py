"""GIN-style message-passing encoder and the matching-score network.

Each layer computes ``act(((1 + eps) * h_v + sum_{u in N(v)} h_u) W + b)``
after a linear input projection. The same weights encode both graphs and
``theta = H_s @ H_t.T``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph, GraphPair
from .matching import matched_probabilities, mean_matching
from .sinkhorn import SinkhornConfig

CHECKPOINT_FORMAT = "stochmatch-weights"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 5
    hidden: int = 64
    epsilon_learnable: bool = False
    activation: str = "tanh"

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("layers and hidden must be positive")
        if self.activation not in ("tanh", "leaky_relu"):
            raise ValueError(f"unknown activation {self.activation!r}")


class EncoderWeights:
    """Named trainable arrays plus the config that shaped them."""

    def __init__(self, config: EncoderConfig, input_dim: int, params: dict[str, Tensor]):
        self.config = config
        self.input_dim = input_dim
        self.params = params

    @classmethod
    def init(cls, config: EncoderConfig, input_dim: int, seed) -> "EncoderWeights":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

        def glorot(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        h = config.hidden
        params = {"input.W": glorot(input_dim, h), "input.b": np.zeros((1, h))}
        for layer in range(config.layers):
            params[f"gin{layer}.W"] = glorot(h, h)
            params[f"gin{layer}.b"] = np.zeros((1, h))
            if config.epsilon_learnable:
                params[f"gin{layer}.eps"] = np.zeros((1, 1))
        return cls(config, input_dim, {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()})

    def names(self) -> list[str]:
        return list(self.params)

    def tensors(self) -> list[Tensor]:
        return list(self.params.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def copy(self) -> "EncoderWeights":
        return EncoderWeights(self.config, self.input_dim,
                              {k: Tensor(t.data.copy(), requires_grad=True, name=k) for k, t in self.params.items()})

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "EncoderWeights":
        if set(arrays) != set(self.params):
            raise ValueError("array names do not match the encoder layout")
        params = {}
        for k, t in self.params.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != t.shape:
                raise ValueError(f"{k}: shape {a.shape} != {t.shape}")
            params[k] = Tensor(a.copy(), requires_grad=True, name=k)
        return EncoderWeights(self.config, self.input_dim, params)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def save(self, path) -> None:
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "input_dim": self.input_dim,
            "arrays": {k: {"shape": list(t.shape), "data": t.data.ravel().tolist()} for k, t in self.params.items()},
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "EncoderWeights":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a weight checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
        config = EncoderConfig(**doc["config"])
        params = {
            k: Tensor(np.array(v["data"], dtype=np.float64).reshape(v["shape"]), requires_grad=True, name=k)
            for k, v in doc["arrays"].items()
        }
        return cls(config, int(doc["input_dim"]), params)


def _activate(x: Tensor, kind: str) -> Tensor:
    return ad.tanh(x) if kind == "tanh" else ad.leaky_relu(x)


def encode(g: Graph, weights: EncoderWeights, features=None) -> Tensor:
    """Node embeddings H (n x hidden).

    ``features`` overrides ``g.features`` (array or Tensor), which is how the
    refinement step feeds reweighted inputs.
    """
    x = g.features if features is None else features
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.cols != weights.input_dim:
        raise ValueError(f"feature width {x.cols} does not match encoder input width {weights.input_dim}")
    cfg = weights.config
    h = ad.add(ad.matmul(x, weights["input.W"]), weights["input.b"])
    adj = Tensor(g.adjacency)
    for layer in range(cfg.layers):
        agg = ad.matmul(adj, h)
        if cfg.epsilon_learnable:
            eps = weights[f"gin{layer}.eps"]
            agg = ad.add(agg, ad.add(h, ad.mul(h, eps)))
        else:
            agg = ad.add(agg, h)
        h = _activate(ad.add(ad.matmul(agg, weights[f"gin{layer}.W"]), weights[f"gin{layer}.b"]), cfg.activation)
    return h


def pair_scores(h_s: Tensor, h_t: Tensor) -> Tensor:
    """Unnormalized inner products between source and target embeddings."""
    return ad.matmul(h_s, ad.transpose(h_t))


def compute_theta(pair: GraphPair, weights: EncoderWeights, features_s=None, features_t=None) -> Tensor:
    """Matching preferences ``theta = H_s @ H_t.T`` from the shared encoder."""
    return pair_scores(encode(pair.source, weights, features_s), encode(pair.target, weights, features_t))


def reweighted_features(pair: GraphPair, m_bar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale each node's input features by its probability of a normal match."""
    a_s, a_t = matched_probabilities(m_bar)
    return a_s[:, None] * pair.source.features, a_t[:, None] * pair.target.features


def refine_theta(prev: Tensor, pair: GraphPair, weights: EncoderWeights, cfg: SinkhornConfig,
                 num_samples: int, seed, m_bar: np.ndarray | None = None) -> Tensor:
    """One refinement step: re-encode the pair with match-reweighted features.

    ``prev`` is treated as a constant. A precomputed sample mean of ``prev``'s
    distribution may be passed as ``m_bar`` to skip resampling.
    """
    if (prev.rows, prev.cols) != (pair.n_s, pair.n_t):
        raise ValueError(f"previous theta has shape {prev.shape}, pair needs {(pair.n_s, pair.n_t)}")
    if m_bar is None:
        m_bar = mean_matching(prev.detach(), cfg, num_samples, seed)
    x_s, x_t = reweighted_features(pair, m_bar)
    return compute_theta(pair, weights, x_s, x_t)
