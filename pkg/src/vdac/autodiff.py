"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: every op stores a closure that maps the
output adjoint to parent adjoints, and :func:`backward` replays those
closures in reverse topological order.  Broadcasting is limited to two
forms, equal shapes and scalar-vs-tensor; anything else must go through
:func:`broadcast_to` so that every adjoint rule stays easy to audit.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "DomainError",
    "GraphError",
    "MaskError",
    "Tensor",
    "GradTape",
    "tensor",
    "parameter",
    "no_grad",
    "is_grad_enabled",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "elu",
    "abs_",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "elementwise",
    "sum_",
    "mean",
    "reshape",
    "transpose",
    "broadcast_to",
    "concat",
    "gather",
    "softmax",
    "log_softmax",
    "backward",
    "grad_check",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An input lies outside the domain of a function."""


class GraphError(RuntimeError):
    """The differentiation graph cannot be used as requested."""


class MaskError(ValueError):
    """A softmax row has no available entry."""

    def __init__(self, message: str, rows: Sequence[int]):
        super().__init__(message)
        self.rows = list(rows)


_GRAD_ENABLED = True


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class _Node:
    __slots__ = ("parents", "backward_fn", "released", "op")

    def __init__(self, op: str, parents: tuple["Tensor", ...], backward_fn: Callable):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.released = False


class Tensor:
    """A dense row-major float64 array that may participate in a graph.

    ``node`` is ``None`` for leaves and constants.  ``grad`` is only ever
    allocated for leaves with ``requires_grad`` set.
    """

    __slots__ = ("data", "node", "requires_grad", "grad", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.node: _Node | None = None
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self) -> "Tensor":
        return mean(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _raise_item(t: Tensor) -> float:
    raise DimensionError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op: str, data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = _Node(op, parents, backward_fn)
    return out


# ---------------------------------------------------------------------------
# binary elementwise ops


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    # scalar operand: sum out the broadcast
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("add", a, b)

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _result("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("sub", a, b)

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _result("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return _result("mul", ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("div", a, b)
    if np.any(b.data == 0.0):
        raise DomainError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _reduce_to(g / bd, a.shape), _reduce_to(-g * out / bd, b.shape)

    return _result("div", out, (a, b), bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Row-major product of an ``m x k`` and a ``k x n`` matrix."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _result("matmul", ad @ bd, (a, b), bw)


# ---------------------------------------------------------------------------
# unary elementwise ops


def relu(x) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    return _result("relu", np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def elu(x, alpha: float = 1.0) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    neg_branch = alpha * np.expm1(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, neg_branch)
    slope = np.where(pos, 1.0, neg_branch + alpha)
    return _result("elu", out, (x,), lambda g: (g * slope,))


def abs_(x) -> Tensor:
    # subgradient at 0 is 0
    x = _as_tensor(x)
    sign = np.sign(x.data)
    return _result("abs", np.abs(x.data), (x,), lambda g: (g * sign,))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _result("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return _result("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)
    return _result("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(~(x.data > 0)):
        raise DomainError("log: input has non-positive entries")
    xd = x.data
    return _result("log", np.log(xd), (x,), lambda g: (g / xd,))


_UNARY = {
    "relu": relu,
    "elu": elu,
    "abs": abs_,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise op by name (``add``, ``relu``, ...)."""
    if op in _BINARY:
        if len(args) != 2:
            raise TypeError(f"{op} takes two arguments")
        return _BINARY[op](*args)
    if op in _UNARY:
        if len(args) != 1:
            raise TypeError(f"{op} takes one argument")
        return _UNARY[op](args[0])
    if op == "none":
        return _as_tensor(args[0])
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# shape ops and reductions


def sum_(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result("sum", np.asarray(out), (x,), bw)


def mean(x) -> Tensor:
    x = _as_tensor(x)
    n = x.size
    if n == 0:
        raise DimensionError("mean of an empty tensor")
    return mul(sum_(x), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return _result("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return _result("transpose", np.ascontiguousarray(x.data.T), (x,), lambda g: (g.T,))


def broadcast_to(x, shape) -> Tensor:
    """Explicit numpy-style broadcast; the adjoint sums the expanded axes."""
    x = _as_tensor(x)
    shape = tuple(shape)
    src = x.shape
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError as exc:
        raise DimensionError(f"broadcast_to: cannot expand {src} to {shape}") from exc
    lead = len(shape) - len(src)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, d in enumerate(src) if d == 1 and shape[i + lead] != 1
    )

    def bw(g):
        return (g.sum(axis=axes, keepdims=True).reshape(src) if axes else g,)

    return _result("broadcast", out, (x,), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        shapes = ", ".join(str(t.shape) for t in ts)
        raise DimensionError(f"concat: incompatible shapes {shapes}") from exc
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result("concat", out, tuple(ts), bw)


def _getitem(x: Tensor, index) -> Tensor:
    shape = x.shape
    out = np.array(x.data[index], dtype=np.float64)
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (slice, int, np.integer)) or p is Ellipsis or p is None for p in parts)

    def bw(g):
        full = np.zeros(shape)
        if basic:  # no repeated elements, plain assignment suffices
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result("getitem", out, (x,), bw)


def gather(x, index) -> Tensor:
    """Pick one entry per row along the last axis: ``out[..., ] = x[..., index]``."""
    x = _as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != x.shape[:-1]:
        raise DimensionError(f"gather: index shape {idx.shape} does not match {x.shape[:-1]}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[-1]):
        raise IndexError("gather: index out of range")
    out = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        return (full,)

    return _result("gather", out, (x,), bw)


# ---------------------------------------------------------------------------
# masked softmax


def _check_mask(x: Tensor, mask) -> np.ndarray | None:
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.shape:
        raise DimensionError(f"softmax: mask shape {m.shape} does not match logits {x.shape}")
    empty = ~m.any(axis=-1)
    if np.any(empty):
        rows = np.flatnonzero(empty.reshape(-1)).tolist()
        raise MaskError(f"softmax: rows {rows} have no available action", rows)
    return m


def softmax(x, mask=None) -> Tensor:
    """Softmax over the last axis; masked entries are exactly zero."""
    x = _as_tensor(x)
    m = _check_mask(x, mask)
    z = x.data if m is None else np.where(m, x.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result("softmax", out, (x,), bw)


def log_softmax(x, mask=None) -> Tensor:
    """Log-probabilities over the last axis; masked entries are set to 0 and carry no gradient."""
    x = _as_tensor(x)
    m = _check_mask(x, mask)
    z = x.data if m is None else np.where(m, x.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    probs = np.exp(out)
    if m is not None:
        out = np.where(m, out, 0.0)

    def bw(g):
        if m is not None:
            g = np.where(m, g, 0.0)
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _result("log_softmax", out, (x,), bw)


# ---------------------------------------------------------------------------
# reverse pass


class GradTape:
    """Reverse-topological record of the nodes reachable from a loss."""

    def __init__(self, loss: Tensor):
        self.loss = loss
        self.order: list[Tensor] = self._sort(loss)
        self.adjoints: dict[int, np.ndarray] = {}

    @staticmethod
    def _sort(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen or t.node is None:
                continue
            if t.node.released:
                raise GraphError(
                    "graph already consumed by a previous backward(); rebuild it with a new forward pass"
                )
            seen.add(id(t))
            stack.append((t, True))
            for p in t.node.parents:
                if p.requires_grad and p.node is not None and id(p) not in seen:
                    stack.append((p, False))
        return order

    def run(self) -> None:
        root = self.loss
        self.adjoints[id(root)] = np.ones(root.shape)
        for t in reversed(self.order):
            node = t.node
            g = self.adjoints.pop(id(t), None)
            if g is None:
                node.released = True
                continue
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if not p.requires_grad or pg is None:
                    continue
                if p.node is None:
                    if p.grad is None:
                        p.grad = np.array(pg, dtype=np.float64, copy=True).reshape(p.shape)
                    else:
                        p.grad += pg
                else:
                    key = id(p)
                    if key in self.adjoints:
                        self.adjoints[key] = self.adjoints[key] + pg
                    else:
                        self.adjoints[key] = pg
            node.released = True
            node.backward_fn = None


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")
    if loss.node is None:
        loss.grad = np.ones(loss.shape) if loss.grad is None else loss.grad + 1.0
        return
    if loss.node.released:
        raise GraphError("backward() called twice on the same graph")
    GradTape(loss).run()


# ---------------------------------------------------------------------------
# finite-difference oracle


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` rebuilds the scalar loss from the current contents of ``params``.
    The error of one coordinate is ``|analytic - fd| / max(1, |fd|)``.
    """
    items = list(params.items())
    for _, p in items:
        p.grad = None
    loss = f()
    if not math.isfinite(loss.item()):
        raise DomainError("grad_check: loss is not finite at the base point")
    backward(loss)
    worst = 0.0
    with no_grad():
        for name, p in items:
            analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
            flat = p.data.reshape(-1)
            an = analytic.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise DomainError(f"grad_check: non-finite loss when perturbing {name}[{i}]")
                fd = (fp - fm) / (2.0 * h)
                worst = max(worst, abs(an[i] - fd) / max(1.0, abs(fd)))
    for _, p in items:
        p.grad = None
    return worst
