"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Every op in the whitelist has a hand-written backward rule.  Nodes get a
monotonically increasing id at creation, so creation order is a topological
order of the graph and ``backward`` simply walks reachable nodes in reverse
id order.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

OPS = (
    "matmul",
    "add",
    "mul",
    "tanh",
    "sigmoid",
    "softmax",
    "log_softmax",
    "concat",
    "slice",
    "sum",
    "embed_lookup",
    "transpose",
)

_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Input shapes do not satisfy an op's shape rule."""


class NumericError(FloatingPointError):
    """An op produced NaN or Inf."""


class ContractError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("values", "grad", "op", "_parents", "_backward", "_id", "requires_grad")

    def __init__(self, values, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), backward: Callable | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = parents
        self._backward = backward
        self._id = next(_ids)
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_lift(other), _lift(-1.0)))

    def __rsub__(self, other):
        return add(_lift(other), mul(self, _lift(-1.0)))

    def __mul__(self, other):
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def param(values) -> Tensor:
    """A trainable leaf."""
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def constant(values) -> Tensor:
    return Tensor(values)


@contextlib.contextmanager
def no_grad():
    """Ops inside the block record no graph (inference path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def stop_gradient(x: Tensor) -> Tensor:
    """Same values, but the edge back to ``x`` is cut."""
    return Tensor(x.values)


def _make(op: str, values: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    if not np.all(np.isfinite(values)):
        shapes = [p.shape for p in parents]
        raise NumericError(f"{op}: non-finite output for input shapes {shapes}")
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(values, op=op, parents=parents, backward=backward)
    return Tensor(values, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Shape rule: (m,k)@(k,n), (k,)@(k,n) or (m,k)@(k,)."""
    if a.values.ndim not in (1, 2) or b.values.ndim not in (1, 2) or a.values.ndim + b.values.ndim < 3:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    out = av @ bv

    def backward(g):
        if av.ndim == 1:
            return g @ bv.T, np.outer(av, g)
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _make("matmul", out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.values + b.values, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    _broadcast_shape("mul", a, b)
    av, bv = a.values, b.values
    return _make("mul", av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.values)
    return _make("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    y = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def _log_softmax(v: np.ndarray) -> np.ndarray:
    shifted = v - v.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    y = np.exp(_log_softmax(x.values))

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("softmax", y, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last axis."""
    y = _log_softmax(x.values)

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", y, (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = tuple(xs)
    if not xs:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([x.values for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]} on axis {axis}") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", out, xs, backward)


def slice(x: Tensor, key) -> Tensor:  # noqa: A001 - op name
    """Basic (non-fancy) indexing."""
    keys = key if isinstance(key, tuple) else (key,)
    if any(isinstance(k, (list, np.ndarray)) for k in keys):
        raise ShapeError(f"slice: fancy index not allowed on shape {x.shape}")
    try:
        out = x.values[key]
    except IndexError:
        raise ShapeError(f"slice: index {key!r} out of range for shape {x.shape}") from None
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        gx[key] = g
        return (gx,)

    return _make("slice", np.array(out), (x,), backward)


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - op name
    shape = x.shape
    out = x.values.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make("sum", np.asarray(out), (x,), backward)


def embed_lookup(table: Tensor, ids) -> Tensor:
    """Rows of a (V, d) table selected by integer ids."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.values.ndim != 2:
        raise ShapeError(f"embed_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embed_lookup: ids out of range for table {table.shape}")
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make("embed_lookup", table.values[ids], (table,), backward)


def transpose(x: Tensor) -> Tensor:
    if x.values.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {x.shape}")
    return _make("transpose", x.values.T.copy(), (x,), lambda g: (g.T,))


# ---------------------------------------------------------------------------
# graph traversal


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, inputs before consumers."""
    seen = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in seen:
            continue
        seen[node._id] = node
        stack.extend(node._parents)
    return [seen[k] for k in sorted(seen)]


def backward(root: Tensor, wrt: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Gradients of a scalar ``root`` with respect to leaves.

    Without ``wrt`` the gradients are accumulated into ``leaf.grad`` for
    every reachable leaf.  With ``wrt`` they are returned instead, one per
    tensor, and tensors unreachable from ``root`` get zeros.
    """
    if root.values.size != 1 or root.values.ndim > 1:
        raise ContractError(f"backward: root must be scalar, got shape {root.shape}")
    grads = {root._id: np.ones_like(root.values)}
    for node in reversed(topological_order(root)):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                if wrt is None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                grads[node._id] = g  # kept for the wrt lookup below
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg
    if wrt is None:
        return None
    return [grads.get(t._id, np.zeros(t.shape)).copy() for t in wrt]


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-5) -> float:
    """Max relative error between AD and central finite-difference gradients.

    ``loss_fn`` must rebuild the graph from the current ``params`` values on
    every call.
    """
    ad = backward(loss_fn(), wrt=params)
    worst = 0.0
    for p, g_ad in zip(params, ad):
        flat = p.values.reshape(-1)
        g_ad = g_ad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            with no_grad():
                up = loss_fn().item()
            flat[i] = orig - epsilon
            with no_grad():
                down = loss_fn().item()
            flat[i] = orig
            g_fd = (up - down) / (2 * epsilon)
            err = abs(g_ad[i] - g_fd) / max(1e-8, abs(g_ad[i]) + abs(g_fd))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# composites


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, mul(b, Tensor(-1.0)))


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step on a (batch, features) input.

    ``weight`` is (in + hidden, 4 * hidden) with gate blocks ordered
    input, forget, output, candidate.
    """
    n = c.shape[-1]
    gates = add(matmul(concat([x, h], axis=-1), weight), bias)
    i = sigmoid(slice(gates, (..., np.s_[0:n])))
    f = sigmoid(slice(gates, (..., np.s_[n:2 * n])))
    o = sigmoid(slice(gates, (..., np.s_[2 * n:3 * n])))
    g = tanh(slice(gates, (..., np.s_[3 * n:4 * n])))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new
