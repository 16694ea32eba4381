"""Iterative refinement with best-parameter retention, and training."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .decode import decode, node_correctness
from .encoder import EncoderWeights, compute_theta, refine_theta
from .graph import GraphPair
from .matching import mean_matching
from .objectives import ObjectiveConfig, QapKernel, sample_objective
from .sinkhorn import SinkhornConfig

log = logging.getLogger(__name__)

# refinement chains run so far and how many broke estimate monotonicity
loop_stats = {"runs": 0, "violations": 0}


def _audit(estimates: list[float]) -> None:
    loop_stats["runs"] += 1
    if any(b < a for a, b in zip(estimates, estimates[1:])):
        loop_stats["violations"] += 1
        log.error("refinement estimates decreased: %s", estimates)


class TrainingDiverged(FloatingPointError):
    def __init__(self, pair_id: str, epoch: int):
        super().__init__(f"non-finite objective on pair {pair_id!r} in epoch {epoch}")
        self.pair_id = pair_id
        self.epoch = epoch


@dataclass
class RefineTrace:
    """Incumbent after each step, its cached estimate, and whether the step's proposal won."""

    thetas: list[np.ndarray] = field(default_factory=list)
    estimates: list[float] = field(default_factory=list)
    accepted: list[bool] = field(default_factory=list)
    proposals: list[float] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.thetas[-1]

    def monotone(self) -> bool:
        return all(b >= a for a, b in zip(self.estimates, self.estimates[1:]))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-4
    T: int = 4
    samples: int = 10
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    batch_size: int = 1
    loss_on: str = "proposals"  # or "accepted"
    anneal_to: float | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.samples < 1 or self.batch_size < 1 or self.T < 0:
            raise ValueError("epochs, samples and batch_size must be positive; T non-negative")
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.loss_on not in ("proposals", "accepted"):
            raise ValueError("loss_on must be 'proposals' or 'accepted'")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def refine_loop(pair: GraphPair, weights: EncoderWeights, sink: SinkhornConfig, obj: ObjectiveConfig,
                T: int, num_samples: int, seed, kernel: QapKernel | None = None) -> RefineTrace:
    """Run T refinement steps, keeping a proposal only if its estimate is no worse.

    Every estimate and every sample mean draws fresh noise from ``seed``'s
    stream; the incumbent's estimate is cached, never recomputed.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    rng = _rng(seed)
    kernel = kernel or QapKernel.edge_agreement(pair)
    gt = pair.ground_truth if obj.supervised else None

    def estimate(theta):
        value, _ = sample_objective(theta, sink, kernel, gt, obj, num_samples, rng)
        return value.item()

    best = compute_theta(pair, weights).detach()
    best_est = estimate(best)
    trace = RefineTrace([best.data], [best_est], [True], [best_est])
    for _ in range(T):
        m_bar = mean_matching(best, sink, num_samples, rng)
        prop = refine_theta(best, pair, weights, sink, num_samples, rng, m_bar=m_bar).detach()
        est = estimate(prop)
        trace.proposals.append(est)
        if est >= best_est:
            best, best_est = prop, est
            trace.accepted.append(True)
        else:
            trace.accepted.append(False)
        trace.thetas.append(best.data)
        trace.estimates.append(best_est)
    _audit(trace.estimates)
    return trace


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: dict, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> list[np.ndarray]:
    """One bias-corrected Adam descent step; ``state`` is updated in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    b1, b2 = betas
    if not state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    state["t"] += 1
    t = state["t"]
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"parameter {k}: shape {p.shape} vs gradient {g.shape}")
        m = state["m"][k] = b1 * state["m"][k] + (1 - b1) * g
        v = state["v"][k] = b2 * state["v"][k] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return out


@dataclass
class PairStep:
    objective: float  # summed training objective over the T+1 terms
    final_estimate: float
    final_theta: np.ndarray
    grads: list[np.ndarray]


def pair_gradients(pair: GraphPair, weights: EncoderWeights, sink: SinkhornConfig, obj: ObjectiveConfig,
                   T: int, num_samples: int, rng: np.random.Generator, loss_on: str = "proposals",
                   kernel: QapKernel | None = None) -> PairStep:
    """Summed expected objective over the refinement chain and its weight gradients.

    Each proposal is encoded with gradients on; the incumbent it was refined
    from enters only as a constant.
    """
    kernel = kernel or QapKernel.edge_agreement(pair)
    gt = pair.ground_truth if obj.supervised else None
    with Tape() as tape:
        theta = compute_theta(pair, weights)
        value, _ = sample_objective(theta, sink, kernel, gt, obj, num_samples, rng)
        total = value
        best, best_val, best_est = theta.detach(), value, value.item()
        incumbents = [best_est]
        for _ in range(T):
            m_bar = mean_matching(best, sink, num_samples, rng)
            prop = refine_theta(best, pair, weights, sink, num_samples, rng, m_bar=m_bar)
            pval, _ = sample_objective(prop, sink, kernel, gt, obj, num_samples, rng)
            est = pval.item()
            if est >= best_est:
                best, best_val, best_est = prop.detach(), pval, est
            incumbents.append(best_est)
            total = ad.add(total, pval if loss_on == "proposals" else best_val)
    _audit(incumbents)
    objective = total.item()
    if not np.isfinite(objective):
        return PairStep(objective, best_est, best.data, [])
    grads = ad.grad(tape, total, wrt=weights.tensors())
    return PairStep(objective, best_est, best.data, grads)


def train(dataset: list[GraphPair], weights: EncoderWeights, cfg: TrainConfig, obj: ObjectiveConfig,
          sink: SinkhornConfig, on_epoch=None) -> tuple[EncoderWeights, list[dict]]:
    """Adam ascent on the summed expected objective of every pair.

    Returns the weights of the best epoch (highest mean final estimate) and
    one log record per epoch. ``on_epoch(record)`` is called as records are
    produced.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if obj.supervised and any(p.ground_truth is None for p in dataset):
        raise ValueError("supervised training needs ground truth on every pair")
    rng = np.random.default_rng(cfg.seed)
    kernels = [QapKernel.edge_agreement(p) for p in dataset]
    weights = weights.copy()
    state: dict = {}
    history: list[dict] = []
    best_score, best_arrays = -np.inf, weights.arrays()
    start_tau = sink.temperature
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        if cfg.anneal_to is not None and cfg.epochs > 1:
            frac = epoch / (cfg.epochs - 1)
            sink = sink.replace(temperature=start_tau + frac * (cfg.anneal_to - start_tau))
        snapshot = weights.arrays()
        finals, ncs, objectives = [], [], []
        pending: list[list[np.ndarray]] = []
        for k, (pair, kernel) in enumerate(zip(dataset, kernels)):
            step = pair_gradients(pair, weights, sink, obj, cfg.T, cfg.samples, rng, cfg.loss_on, kernel)
            if not np.isfinite(step.objective):
                raise TrainingDiverged(pair.name or str(k), epoch)
            objectives.append(step.objective)
            finals.append(step.final_estimate)
            if pair.ground_truth is not None:
                pred, _ = decode(step.final_theta, sink.dummy)
                ncs.append(node_correctness(pred, pair.ground_truth))
            pending.append(step.grads)
            if len(pending) == cfg.batch_size or k == len(dataset) - 1:
                mean_grad = [-sum(gs) / len(pending) for gs in zip(*pending)]
                new = adam_step([t.data for t in weights.tensors()], mean_grad, state,
                                cfg.learning_rate, cfg.betas, cfg.eps)
                weights = weights.with_arrays(dict(zip(weights.names(), new)))
                pending = []
        record = {"epoch": epoch, "mean_objective": float(np.mean(finals)),
                  "train_objective": float(np.mean(objectives))}
        if ncs:
            record["node_correctness"] = float(np.mean(ncs))
        record["seconds"] = time.perf_counter() - t0
        history.append(record)
        log.info("epoch %d objective %.4f%s", epoch, record["mean_objective"],
                 f" nc {record['node_correctness']:.4f}" if ncs else "")
        if on_epoch is not None:
            on_epoch(record)
        if record["mean_objective"] > best_score:
            best_score, best_arrays = record["mean_objective"], snapshot
    return weights.with_arrays(best_arrays), history
