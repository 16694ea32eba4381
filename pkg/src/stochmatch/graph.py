"""Graphs, graph pairs, synthetic benchmark generation and pair files."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import networkx as nx
import numpy as np

DEFAULT_MAX_DEGREE = 32
DEFAULT_ATTACH = 2


class PairFormatError(ValueError):
    """Raised for malformed pair files; the message names the offending field."""


def degree_features(g: "Graph | tuple[int, frozenset]", max_degree: int = DEFAULT_MAX_DEGREE) -> np.ndarray:
    """One-hot of min(degree, max_degree); shape (n, max_degree + 1)."""
    if max_degree < 1:
        raise ValueError("max_degree must be positive")
    n, edges = (g.num_nodes, g.edges) if isinstance(g, Graph) else g
    deg = np.zeros(n, dtype=np.int64)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    out = np.zeros((n, max_degree + 1))
    out[np.arange(n), np.minimum(deg, max_degree)] = 1.0
    return out


def _norm_edges(num_nodes: int, edges, where: str = "edges") -> frozenset[tuple[int, int]]:
    out = set()
    for k, e in enumerate(edges):
        try:
            i, j = (int(v) for v in e)
        except (TypeError, ValueError):
            raise PairFormatError(f"{where}[{k}]: expected a pair of node indices, got {e!r}") from None
        if not (0 <= i < num_nodes and 0 <= j < num_nodes):
            raise PairFormatError(f"{where}[{k}]: node index out of range for {num_nodes} nodes: {[i, j]}")
        if i == j:
            raise PairFormatError(f"{where}[{k}]: self-loop on node {i}")
        key = (i, j) if i < j else (j, i)
        if key in out:
            raise PairFormatError(f"{where}[{k}]: duplicate edge {list(key)}")
        out.add(key)
    return frozenset(out)


@dataclass(frozen=True, eq=False)
class Graph:
    num_nodes: int
    edges: frozenset
    features: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ValueError("a graph needs at least one node")
        edges = _norm_edges(self.num_nodes, self.edges)
        object.__setattr__(self, "edges", edges)
        feats = self.features
        if feats is None:
            feats = degree_features((self.num_nodes, edges))
        feats = np.array(feats, dtype=np.float64, copy=True)
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise ValueError(f"features must have {self.num_nodes} rows, got shape {feats.shape}")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        if self.edges:
            idx = np.array(sorted(self.edges))
            a[idx[:, 0], idx[:, 1]] = 1.0
            a[idx[:, 1], idx[:, 0]] = 1.0
        a.flags.writeable = False
        return a

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    def with_features(self, features: np.ndarray) -> "Graph":
        return Graph(self.num_nodes, self.edges, features)

    def has_degree_features(self) -> bool:
        width = self.feature_dim - 1
        return width >= 1 and np.array_equal(self.features, degree_features(self, width))

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.num_nodes == other.num_nodes and self.edges == other.edges
                and np.array_equal(self.features, other.features))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GraphPair:
    source: Graph
    target: Graph
    ground_truth: tuple[tuple[int, int], ...] | None = None
    swapped: bool = False
    name: str = ""

    def __post_init__(self):
        if self.source.num_nodes > self.target.num_nodes:
            raise ValueError("source must not be larger than target; use GraphPair.oriented")
        if self.source.feature_dim != self.target.feature_dim:
            raise ValueError(f"feature widths differ: {self.source.feature_dim} vs {self.target.feature_dim}")
        if self.ground_truth is not None:
            gt = tuple((int(i), int(j)) for i, j in self.ground_truth)
            src = [i for i, _ in gt]
            tgt = [j for _, j in gt]
            if len(set(src)) != len(src) or len(set(tgt)) != len(tgt):
                raise ValueError("ground truth must be injective in both coordinates")
            for i, j in gt:
                if not (0 <= i < self.source.num_nodes and 0 <= j < self.target.num_nodes):
                    raise ValueError(f"ground truth pair {(i, j)} indexes a missing node")
            object.__setattr__(self, "ground_truth", gt)

    @classmethod
    def oriented(cls, source: Graph, target: Graph, ground_truth=None, name: str = "") -> "GraphPair":
        """Build a pair, swapping the graphs if the source is the larger one."""
        if source.num_nodes > target.num_nodes:
            gt = None if ground_truth is None else [(j, i) for i, j in ground_truth]
            return cls(target, source, gt, swapped=True, name=name)
        return cls(source, target, ground_truth, name=name)

    @property
    def n_s(self) -> int:
        return self.source.num_nodes

    @property
    def n_t(self) -> int:
        return self.target.num_nodes

    def truth_array(self) -> np.ndarray | None:
        """Ground-truth target per source node, -1 where none is given."""
        if self.ground_truth is None:
            return None
        out = np.full(self.n_s, -1, dtype=np.int64)
        for i, j in self.ground_truth:
            out[i] = j
        return out

    def __eq__(self, other):
        if not isinstance(other, GraphPair):
            return NotImplemented
        return (self.source == other.source and self.target == other.target
                and self.ground_truth == other.ground_truth and self.swapped == other.swapped)

    __hash__ = None


# ------------------------------------------------------------- generation


def generate_ba(num_nodes: int, attach: int = DEFAULT_ATTACH, seed: int = 0,
                max_degree: int = DEFAULT_MAX_DEGREE) -> Graph:
    """Barabasi-Albert graph with degree features.

    Uses networkx's variant: a star on ``attach + 1`` nodes, then each new
    node links to ``attach`` existing nodes, so there are
    ``attach * (num_nodes - attach)`` edges.
    """
    if attach < 1 or num_nodes < 1 or attach >= num_nodes:
        raise ValueError(f"need 1 <= attach < num_nodes, got attach={attach}, num_nodes={num_nodes}")
    nxg = nx.barabasi_albert_graph(num_nodes, attach, seed=seed)
    edges = frozenset((min(u, v), max(u, v)) for u, v in nxg.edges())
    return Graph(num_nodes, edges, degree_features((num_nodes, edges), max_degree))


def corrupt(g: Graph, noise_fraction: float, seed: int) -> tuple[Graph, list[tuple[int, int]]]:
    """Add ``round(noise_fraction * |E|)`` random non-edges and shuffle labels.

    Returns the target graph and the ground truth as (source, target) pairs.
    Degree-derived features are recomputed on the target; other features
    travel with their node.
    """
    if not 0.0 <= noise_fraction <= 1.0:
        raise ValueError("noise_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n = g.num_nodes
    n_add = int(np.floor(noise_fraction * g.num_edges + 0.5))
    free = n * (n - 1) // 2 - g.num_edges
    if n_add > free:
        raise ValueError(f"cannot add {n_add} edges: only {free} non-edges available")
    edges = set(g.edges)
    if n_add > 0:
        iu, ju = np.triu_indices(n, k=1)
        candidates = [(int(i), int(j)) for i, j in zip(iu, ju) if (int(i), int(j)) not in edges]
        pick = rng.choice(len(candidates), size=n_add, replace=False)
        edges.update(candidates[k] for k in sorted(pick))
    perm = rng.permutation(n)
    new_edges = frozenset(
        (min(perm[i], perm[j]), max(perm[i], perm[j])) for i, j in edges
    )
    new_edges = frozenset((int(i), int(j)) for i, j in new_edges)
    if g.has_degree_features():
        feats = degree_features((n, new_edges), g.feature_dim - 1)
    else:
        feats = np.empty_like(g.features)
        feats[perm] = g.features
    truth = [(i, int(perm[i])) for i in range(n)]
    return Graph(n, new_edges, feats), truth


def make_ba_pair(num_nodes: int, noise_fraction: float, seed: int, attach: int = DEFAULT_ATTACH,
                 max_degree: int = DEFAULT_MAX_DEGREE, name: str = "") -> GraphPair:
    ss = np.random.SeedSequence(seed)
    s_graph, s_noise = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
    src = generate_ba(num_nodes, attach, s_graph, max_degree)
    tgt, truth = corrupt(src, noise_fraction, s_noise)
    return GraphPair(src, tgt, truth, name=name)


# -------------------------------------------------------------------- I/O


def _graph_to_json(g: Graph) -> dict:
    out = {"n": g.num_nodes, "edges": [list(e) for e in sorted(g.edges)]}
    if not np.array_equal(g.features, degree_features(g, DEFAULT_MAX_DEGREE)):
        out["features"] = g.features.tolist()
    return out


def pair_to_json(pair: GraphPair) -> dict:
    """Serialize in the caller's orientation (undoing any load-time swap)."""
    src, tgt, gt = pair.source, pair.target, pair.ground_truth
    if pair.swapped:
        src, tgt = tgt, src
        gt = None if gt is None else tuple((j, i) for i, j in gt)
    out = {"source": _graph_to_json(src), "target": _graph_to_json(tgt)}
    if gt is not None:
        out["ground_truth"] = [list(p) for p in sorted(gt)]
    return out


def save_pair(pair: GraphPair, path) -> None:
    Path(path).write_text(json.dumps(pair_to_json(pair)) + "\n")


def _graph_from_json(obj, where: str) -> Graph:
    if not isinstance(obj, dict):
        raise PairFormatError(f"{where}: expected an object")
    n = obj.get("n")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise PairFormatError(f"{where}.n: expected a positive integer, got {n!r}")
    edges = obj.get("edges", [])
    if not isinstance(edges, list):
        raise PairFormatError(f"{where}.edges: expected a list")
    edges = _norm_edges(n, edges, f"{where}.edges")
    feats = obj.get("features")
    if feats is not None:
        try:
            feats = np.array(feats, dtype=np.float64)
        except (TypeError, ValueError):
            raise PairFormatError(f"{where}.features: not a numeric matrix") from None
        if feats.ndim != 2 or feats.shape[0] != n:
            raise PairFormatError(f"{where}.features: expected {n} rows, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise PairFormatError(f"{where}.features: non-finite entries")
    return Graph(n, edges, feats)


def pair_from_json(obj, name: str = "") -> GraphPair:
    if not isinstance(obj, dict):
        raise PairFormatError("top level: expected an object")
    for key in ("source", "target"):
        if key not in obj:
            raise PairFormatError(f"missing field '{key}'")
    src = _graph_from_json(obj["source"], "source")
    tgt = _graph_from_json(obj["target"], "target")
    if src.feature_dim != tgt.feature_dim:
        raise PairFormatError(f"feature widths differ: source {src.feature_dim}, target {tgt.feature_dim}")
    gt = obj.get("ground_truth")
    if gt is not None:
        if not isinstance(gt, list):
            raise PairFormatError("ground_truth: expected a list of pairs")
        checked = []
        for k, p in enumerate(gt):
            if not (isinstance(p, list) and len(p) == 2 and all(isinstance(v, int) for v in p)):
                raise PairFormatError(f"ground_truth[{k}]: expected [source, target], got {p!r}")
            i, j = p
            if not (0 <= i < src.num_nodes and 0 <= j < tgt.num_nodes):
                raise PairFormatError(f"ground_truth[{k}]: node index out of range: {p}")
            checked.append((i, j))
        if len({i for i, _ in checked}) != len(checked) or len({j for _, j in checked}) != len(checked):
            raise PairFormatError("ground_truth: pairs must be one-to-one")
        gt = checked
    return GraphPair.oriented(src, tgt, gt, name=name)


def load_pair(path) -> GraphPair:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise PairFormatError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    try:
        return pair_from_json(obj, name=path.stem)
    except PairFormatError as e:
        raise PairFormatError(f"{path}: {e}") from None
