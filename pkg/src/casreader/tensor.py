"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation that sees a gradient-requiring input records itself on the
output (parents + a backward closure), so each forward pass rebuilds the
graph from scratch — sequences here are variable-length and a static graph
would buy nothing. `Tensor.backward` walks the recorded graph once in
reverse topological order. `grad_check` is the independent oracle: central
finite differences against the analytic gradients.

All math is 64-bit; masked softmax subtracts the running max for stability;
the pointwise/reduction max routes tie subgradients to the first operand.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, EmptySupportError, NumericError, UsageError

Array = np.ndarray


class Tensor:
    """A dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[Array], None] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, op={self._op!r}{flag})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed=None) -> None:
        """Propagate gradients from this tensor to every reachable leaf.

        `seed` defaults to ones for scalar outputs and must match this
        tensor's shape otherwise.
        """
        if not self.requires_grad:
            raise UsageError("backward called on a tensor with no recorded graph")
        if seed is None:
            if self.data.size != 1:
                raise UsageError("an explicit seed is required for non-scalar outputs")
            seed_arr = np.ones_like(self.data)
        else:
            seed_arr = seed.data if isinstance(seed, Tensor) else np.asarray(seed, dtype=np.float64)
            if seed_arr.shape != self.data.shape:
                raise DimensionError(
                    f"seed shape {seed_arr.shape} does not match output shape {self.data.shape}"
                )
        _accumulate(self, seed_arr)
        for node in reversed(_topo_order(self)):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # Small conveniences; the primary API is the module-level functions.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order over the recorded graph; parents precede consumers."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: Array) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _record(out: Tensor, parents: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    """Attach graph bookkeeping to `out` if any parent needs gradients."""
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out._op = op
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum `g` down to `shape`, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# pointwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _record(out, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _record(out, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), "mul", backward)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign so exp never overflows.
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y)

    def backward(g: Array) -> None:
        _accumulate(a, g * y * (1.0 - y))

    return _record(out, (a,), "sigmoid", backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)

    def backward(g: Array) -> None:
        _accumulate(a, g * (1.0 - y * y))

    return _record(out, (a,), "tanh", backward)


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))

    def backward(g: Array) -> None:
        _accumulate(a, g / a.data)

    return _record(out, (a,), "log", backward)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise max; on exact ties the subgradient goes to `a`."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise DimensionError(f"maximum operand shapes differ: {a.data.shape} vs {b.data.shape}")
    first = a.data >= b.data
    out = Tensor(np.where(first, a.data, b.data))

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accumulate(a, g * first)
        if b.requires_grad:
            _accumulate(b, g * ~first)

    return _record(out, (a, b), "maximum", backward)


def elementwise(kind: str, *operands) -> Tensor:
    """Dispatch table over the pointwise kernels: add, mul, sigmoid, tanh, max."""
    table = {"add": add, "mul": mul, "sigmoid": sigmoid, "tanh": tanh, "max": maximum}
    if kind not in table:
        raise UsageError(f"unknown elementwise kind {kind!r}")
    binary = kind in ("add", "mul", "max")
    expected = 2 if binary else 1
    if len(operands) != expected:
        raise UsageError(f"elementwise {kind!r} takes {expected} operand(s), got {len(operands)}")
    if binary:
        a, b = (_as_tensor(o) for o in operands)
        if a.data.shape != b.data.shape:
            raise DimensionError(f"elementwise {kind!r} shapes differ: {a.data.shape} vs {b.data.shape}")
        return table[kind](a, b)
    return table[kind](_as_tensor(operands[0]))


# ---------------------------------------------------------------------------
# linear algebra and shape plumbing
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-d operands, got shapes {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    out = Tensor(a.data @ b.data)

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _record(out, (a, b), "matmul", backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.data.shape}")
    out = Tensor(a.data.T)

    def backward(g: Array) -> None:
        _accumulate(a, g.T)

    return _record(out, (a,), "transpose", backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def backward(g: Array) -> None:
        _accumulate(a, g.reshape(a.data.shape))

    return _record(out, (a,), "reshape", backward)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise DimensionError(
            f"concat_cols expects matrices with equal row counts, got {a.data.shape} and {b.data.shape}"
        )
    split = a.data.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1))

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accumulate(a, g[:, :split])
        if b.requires_grad:
            _accumulate(b, g[:, split:])

    return _record(out, (a, b), "concat_cols", backward)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of `a`; the backward rule scatter-adds into those rows only."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("gather_rows expects a flat index sequence")
    n = a.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"row index out of range for {n} rows: {idx[(idx < 0) | (idx >= n)][0]}")
    out = Tensor(a.data[idx])

    def backward(g: Array) -> None:
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    return _record(out, (a,), "gather_rows", backward)


def stack_rows(tensors: Sequence[Tensor], row: int) -> Tensor:
    """Stack row `row` of each input matrix into a new [len(tensors) x width] matrix."""
    if not tensors:
        raise UsageError("stack_rows needs at least one input")
    out = Tensor(np.stack([t.data[row] for t in tensors]))

    def backward(g: Array) -> None:
        for i, t in enumerate(tensors):
            if t.requires_grad:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad[row] += g[i]

    return _record(out, tuple(tensors), "stack_rows", backward)


def where_rows(keep: Array, a: Tensor, b: Tensor) -> Tensor:
    """Row-wise select: rows of `a` where `keep`, rows of `b` elsewhere."""
    keep = np.asarray(keep, dtype=bool)
    if a.data.shape != b.data.shape or keep.shape != (a.data.shape[0],):
        raise DimensionError(
            f"where_rows shapes disagree: keep {keep.shape}, a {a.data.shape}, b {b.data.shape}"
        )
    col = keep[:, None]
    out = Tensor(np.where(col, a.data, b.data))

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accumulate(a, np.where(col, g, 0.0))
        if b.requires_grad:
            _accumulate(b, np.where(col, 0.0, g))

    return _record(out, (a, b), "where_rows", backward)


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis))

    def backward(g: Array) -> None:
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _record(out, (a,), "reduce_sum", backward)


def reduce_max(a: Tensor, axis: int = 0) -> Tensor:
    """Max over one axis; ties route the subgradient to the first maximal entry."""
    out = Tensor(a.data.max(axis=axis))
    argmax = a.data.argmax(axis=axis)  # first occurrence on ties

    def backward(g: Array) -> None:
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        if axis == 0:
            a.grad[argmax, np.arange(a.data.shape[1])] += g
        else:
            a.grad[np.arange(a.data.shape[0]), argmax] += g

    return _record(out, (a,), "reduce_max", backward)


def take(a: Tensor, index: int) -> Tensor:
    """Pick one entry of a vector as a scalar tensor."""
    if a.data.ndim != 1:
        raise DimensionError(f"take expects a vector, got shape {a.data.shape}")
    out = Tensor(a.data[index])

    def backward(g: Array) -> None:
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[index] += g

    return _record(out, (a,), "take", backward)


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise UsageError("add_n needs at least one input")
    total = tensors[0].data.copy()
    for t in tensors[1:]:
        total += t.data
    out = Tensor(total)

    def backward(g: Array) -> None:
        for t in tensors:
            if t.requires_grad:
                _accumulate(t, g)

    return _record(out, tuple(tensors), "add_n", backward)


def group_sum(values: Tensor, groups, num_groups: int) -> Tensor:
    """Accumulate vector entries into group slots, left to right.

    The explicit loop fixes the addition order so repeated runs (and the
    word-level aggregation built on this) are bit-reproducible.
    """
    if values.data.ndim != 1:
        raise DimensionError(f"group_sum expects a vector, got shape {values.data.shape}")
    idx = np.asarray(groups, dtype=np.int64)
    if idx.shape != values.data.shape:
        raise DimensionError("group_sum: groups must align with values")
    acc = np.zeros(num_groups)
    for i, slot in enumerate(idx):
        acc[slot] += values.data[i]
    out = Tensor(acc)

    def backward(g: Array) -> None:
        _accumulate(values, g[idx])

    return _record(out, (values,), "group_sum", backward)


# ---------------------------------------------------------------------------
# masked softmax
# ---------------------------------------------------------------------------

def masked_softmax(logits: Tensor, mask) -> Tensor:
    """Softmax over the unmasked positions of the last axis.

    Masked entries are exactly zero in the output. Accepts a vector or a
    matrix (the mask applies to every row). Stabilized by subtracting the
    running max over the unmasked support.
    """
    logits = _as_tensor(logits)
    mask = np.asarray(mask, dtype=bool)
    x = logits.data
    if mask.ndim != 1 or mask.shape[0] != x.shape[-1]:
        raise DimensionError(
            f"mask shape {mask.shape} does not match logits shape {x.shape}"
        )
    if not mask.any():
        raise EmptySupportError("masked_softmax over a fully masked vector")

    if x.ndim == 1:
        shifted = x[mask] - x[mask].max()
        e = np.zeros_like(x)
        e[mask] = np.exp(shifted)
        probs = e / e.sum()
    elif x.ndim == 2:
        sub = x[:, mask]
        shifted = sub - sub.max(axis=1, keepdims=True)
        e = np.zeros_like(x)
        e[:, mask] = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)
    else:
        raise DimensionError(f"masked_softmax expects a vector or matrix, got shape {x.shape}")
    out = Tensor(probs)

    def backward(g: Array) -> None:
        # probs is zero at masked positions, so the usual softmax rule
        # already sends zero gradient there.
        if probs.ndim == 1:
            inner = float((g * probs).sum())
        else:
            inner = (g * probs).sum(axis=1, keepdims=True)
        _accumulate(logits, probs * (g - inner))

    return _record(out, (logits,), "masked_softmax", backward)


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def grad_check(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    epsilon: float = 1e-5,
) -> float:
    """Compare analytic gradients of `loss_fn` against central differences.

    `loss_fn` must be a deterministic scalar function of `params` (no
    dropout, fixed inputs). Returns the max relative error
    max_i |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|) over all parameters.
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_fn(params)
    if loss.data.size != 1:
        raise UsageError("grad_check requires a scalar loss")
    if not np.isfinite(loss.data):
        raise NumericError("loss is non-finite at the evaluation point")
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    frozen = {name: Tensor(p.data.copy()) for name, p in params.items()}
    worst = 0.0
    for name, p in frozen.items():
        flat = p.data.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = float(loss_fn(frozen).data)
            flat[i] = orig - epsilon
            lo = float(loss_fn(frozen).data)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(f"loss is non-finite while perturbing {name!r}")
            fd = (hi - lo) / (2.0 * epsilon)
            err = abs(ga[i] - fd) / max(1e-8, abs(ga[i]) + abs(fd))
            worst = max(worst, err)
    return worst
