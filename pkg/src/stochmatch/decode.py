"""MAP decoding with the Hungarian algorithm, and matching metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .matching import build_phi

DUMMY = -1


def hungarian(scores) -> tuple[np.ndarray, float]:
    """Maximum-weight perfect assignment on an r x c score matrix (r <= c).

    Returns ``(cols, value)`` where ``cols[i]`` is the column given to row
    ``i``. Shortest augmenting paths with dual potentials, O(r^2 c); ties go
    to the lowest column index, rows are inserted in index order.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError("scores must be a matrix")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    r, c = s.shape
    if r > c:
        cols_t, value = hungarian(s.T)
        rows = np.empty(r, dtype=np.int64)
        rows[:] = -1
        rows[cols_t] = np.arange(c)
        return rows, value
    cost = -s
    u = np.zeros(r + 1)
    v = np.zeros(c + 1)
    owner = np.zeros(c + 1, dtype=np.int64)  # 1-based row holding each column; 0 = free
    way = np.zeros(c + 1, dtype=np.int64)
    for i in range(1, r + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(c + 1, np.inf)
        used = np.zeros(c + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            done = np.flatnonzero(used)
            u[owner[done]] += delta
            v[done] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    cols = np.empty(r, dtype=np.int64)
    for j in range(1, c + 1):
        if owner[j]:
            cols[owner[j] - 1] = j - 1
    value = float(sum(s[i, cols[i]] for i in range(r)))
    return cols, value


@dataclass(frozen=True)
class DiscreteMatching:
    """Target index per source node, :data:`DUMMY` for the dummy node."""

    assignment: tuple[int, ...]
    n_t: int

    def __post_init__(self):
        a = tuple(int(x) for x in self.assignment)
        taken = [x for x in a if x != DUMMY]
        if len(set(taken)) != len(taken):
            raise ValueError("a target node is matched twice")
        if any(not (x == DUMMY or 0 <= x < self.n_t) for x in a):
            raise ValueError("assignment index out of range")
        object.__setattr__(self, "assignment", a)

    @property
    def n_s(self) -> int:
        return len(self.assignment)

    def reverse(self) -> tuple[int, ...]:
        """Source index per target node, DUMMY where unmatched."""
        back = [DUMMY] * self.n_t
        for i, j in enumerate(self.assignment):
            if j != DUMMY:
                back[j] = i
        return tuple(back)

    def as_matrix(self) -> np.ndarray:
        """Binary (n_s+1) x (n_t+1) matching matrix with dummy row/column."""
        m = np.zeros((self.n_s + 1, self.n_t + 1))
        for i, j in enumerate(self.assignment):
            m[i, self.n_t if j == DUMMY else j] = 1.0
        for j, i in enumerate(self.reverse()):
            if i == DUMMY:
                m[self.n_s, j] = 1.0
        return m

    def oriented(self, swapped: bool) -> list[int]:
        """Assignment in the caller's orientation (undoes a load-time swap)."""
        return list(self.reverse() if swapped else self.assignment)


def decode(theta, dummy: bool = True) -> tuple[DiscreteMatching, float]:
    """Most probable matching: assignment on the m x m embedded scores.

    Returns the matching and its score trace(M^T pad(theta)).
    """
    t = theta if isinstance(theta, Tensor) else Tensor(theta)
    n_s, n_t = t.rows, t.cols
    phi = build_phi(t.detach(), dummy).data
    cols, _ = hungarian(phi)
    assignment = [int(j) if j < n_t else DUMMY for j in cols[:n_s]]
    score = float(sum(t.data[i, j] for i, j in enumerate(assignment) if j != DUMMY))
    return DiscreteMatching(tuple(assignment), n_t), score


def truth_assignment(ground_truth, n_s: int) -> np.ndarray:
    out = np.full(n_s, DUMMY, dtype=np.int64)
    for i, j in ground_truth:
        out[i] = j
    return out


def node_correctness(pred: DiscreteMatching, truth) -> float:
    """Fraction of source nodes assigned exactly as in the ground truth.

    ``truth`` is a list of (source, target) pairs; source nodes absent from it
    are expected on the dummy.
    """
    if truth is None:
        raise ValueError("node correctness needs a ground truth")
    want = truth_assignment(truth, pred.n_s)
    return float(np.mean(np.asarray(pred.assignment) == want))


def hard_soft_match(pred: DiscreteMatching, truth_pattern) -> tuple[int, float]:
    """(1 if every required pair holds else 0, fraction of required pairs held).

    An empty pattern is vacuously satisfied: (1, 1.0).
    """
    pattern = list(truth_pattern)
    if not pattern:
        return 1, 1.0
    hits = sum(1 for i, j in pattern if pred.assignment[i] == j)
    return int(hits == len(pattern)), hits / len(pattern)


def truth_pattern(ground_truth, n_s: int) -> list[tuple[int, int]]:
    """Required pairs: the ground truth plus a dummy match for every other source node."""
    return list(enumerate(truth_assignment(ground_truth, n_s).tolist()))
