"""Dense float64 matrices with a reverse-mode differentiation tape.

A :class:`Tensor` wraps a numpy array whose trailing two axes are the matrix
rows and columns. An optional leading batch axis lets Monte Carlo samples be
pushed through the same primitives in one pass; batch broadcasting is undone
in the adjoints.

Operations are recorded only while a :class:`Tape` is active and at least one
input requires a gradient::

    x = Tensor(np.ones((3, 3)), requires_grad=True)
    with Tape() as tape:
        y = reduce_sum(mul(x, x))
    grads = grad(tape, y)          # {x: 2 * x.data}
"""
from __future__ import annotations

import numpy as np

CLAMP = 1e-300
LEAKY_SLOPE = 0.1

_active: list["Tape"] = []


class _Saturation:
    """Counts log/div inputs that had to be clamped to stay finite."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


saturation = _Saturation()


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim < 2:
            arr = arr.reshape((1,) * (2 - arr.ndim) + arr.shape)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[-2]

    @property
    def cols(self) -> int:
        return self.data.shape[-1]

    def detach(self) -> "Tensor":
        """Stop-gradient view: same values, never receives an adjoint."""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single entry, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar over the primitives below
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, float(other))
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __neg__(self):
        return scalar_mul(self, -1.0)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive applications.

    Entries are appended at creation time, so the list is already in
    topological order; :func:`grad` walks it backwards once.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.pop()
        return False

    def __len__(self):
        return len(self.records)


def _record(out_data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    tracked = bool(_active) and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=tracked)
    if tracked:
        _active[-1].records.append((out, parents, backward))
    return out


def grad(tape: Tape, output: Tensor, wrt=None, seed: float = 1.0):
    """Back-propagate from a scalar ``output``.

    Without ``wrt``, returns a mapping from every tracked leaf (a tensor
    created with ``requires_grad=True``) to its adjoint; detached tensors
    never appear. With ``wrt`` (a sequence of tensors), returns a list of
    adjoints in that order, zero-filled for anything that did not
    contribute.
    """
    if output.data.size != 1:
        raise ValueError(f"grad needs a scalar output, got shape {output.shape}")
    adj: dict[int, np.ndarray] = {id(output): np.full(output.shape, seed)}
    produced = set()
    leaves: dict[int, Tensor] = {}
    for out, parents, backward in reversed(tape.records):
        produced.add(id(out))
        g = adj.pop(id(out), None)
        if g is None:
            continue
        for p, gp in zip(parents, backward(g)):
            if not p.requires_grad or gp is None:
                continue
            key = id(p)
            if key in adj:
                adj[key] = adj[key] + gp
            else:
                adj[key] = gp
                leaves[key] = p
    result: dict[Tensor, np.ndarray] = {}
    for key, g in adj.items():
        if key in produced:
            continue
        t = leaves.get(key, output if key == id(output) else None)
        if t is not None:
            result[t] = g
    if wrt is None:
        return result
    return [result.get(t, np.zeros(t.shape)) if t.requires_grad else np.zeros(t.shape) for t in wrt]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _check_same(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g @ _swap(bd), ad.shape), _unbroadcast(_swap(ad) @ g, bd.shape))

    return _record(ad @ bd, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    return _record(_swap(a.data), (a,), lambda g: (_swap(g),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product (batch and 1x1 broadcasting allowed)."""
    _check_same("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))

    return _record(ad * bd, (a, b), backward)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, (a,), lambda g: (g * c,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="raise"):
        out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    low = x < CLAMP
    if low.any():
        saturation.count += int(low.sum())
        x = np.maximum(x, CLAMP)
    return _record(np.log(x), (a,), lambda g: (g / x,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = a.data > 0
    out = np.where(pos, a.data, slope * a.data)
    return _record(out, (a,), lambda g: (np.where(pos, g, slope * g),))


def row_sum(a: Tensor) -> Tensor:
    """(..., r, c) -> (..., r, 1)."""
    shape = a.shape
    return _record(a.data.sum(axis=-1, keepdims=True), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def col_sum(a: Tensor) -> Tensor:
    """(..., r, c) -> (..., 1, c)."""
    shape = a.shape
    return _record(a.data.sum(axis=-2, keepdims=True), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def _safe_div(a: Tensor, v: Tensor, axis: int, op: str) -> Tensor:
    want = list(a.shape)
    want[axis] = 1
    if v.shape[-2:] != tuple(want[-2:]):
        raise ValueError(f"{op}: divisor shape {v.shape} does not fit {a.shape}")
    vd = v.data
    low = np.abs(vd) < CLAMP
    if low.any():
        saturation.count += int(low.sum())
        vd = np.where(low, np.where(vd < 0, -CLAMP, CLAMP), vd)
    ad = a.data
    out = ad / vd

    def backward(g):
        gv = -(g * out / vd).sum(axis=axis, keepdims=True)
        return (_unbroadcast(g / vd, ad.shape), _unbroadcast(gv, v.shape))

    return _record(out, (a, v), backward)


def broadcast_div_rows(a: Tensor, v: Tensor) -> Tensor:
    """Divide row ``i`` of ``a`` by ``v[i]``; ``v`` is a column vector."""
    return _safe_div(a, v, -1, "broadcast_div_rows")


def broadcast_div_cols(a: Tensor, v: Tensor) -> Tensor:
    """Divide column ``j`` of ``a`` by ``v[j]``; ``v`` is a row vector."""
    return _safe_div(a, v, -2, "broadcast_div_cols")


def slice_block(a: Tensor, r0: int, r1: int, c0: int, c1: int) -> Tensor:
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[..., r0:r1, c0:c1] = g
        return (full,)

    return _record(a.data[..., r0:r1, c0:c1].copy(), (a,), backward)


def pad_block(a: Tensor, rows: int, cols: int, r0: int = 0, c0: int = 0) -> Tensor:
    """Embed ``a`` into a zero matrix of shape (rows, cols) at offset (r0, c0)."""
    r, c = a.rows, a.cols
    if r0 + r > rows or c0 + c > cols:
        raise ValueError(f"pad_block: {a.shape} does not fit in ({rows}, {cols}) at ({r0}, {c0})")
    out = np.zeros(a.shape[:-2] + (rows, cols))
    out[..., r0:r0 + r, c0:c0 + c] = a.data
    return _record(out, (a,), lambda g: (g[..., r0:r0 + r, c0:c0 + c].copy(),))


def reduce_sum(a: Tensor) -> Tensor:
    """Sum of every entry, returned as a 1x1 matrix."""
    shape = a.shape
    return _record(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g.reshape(-1)[0]),))


def matrix_sum(a: Tensor) -> Tensor:
    """Per-matrix total: (..., r, c) -> (..., 1, 1)."""
    shape = a.shape
    return _record(a.data.sum(axis=(-2, -1), keepdims=True), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def log_normalize(a: Tensor, axis: int) -> Tensor:
    """``a - logsumexp(a, axis)``; one Sinkhorn half-step in log space.

    axis=-1 normalizes rows, axis=-2 normalizes columns.
    """
    x = a.data
    mx = x.max(axis=axis, keepdims=True)
    shifted = x - mx
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), backward)


def clamp_min(a: Tensor, low: float) -> Tensor:
    """max(a, low) entrywise; entries held at the floor pass no gradient."""
    keep = a.data >= low
    return _record(np.where(keep, a.data, low), (a,), lambda g: (np.where(keep, g, 0.0),))
