"""Reverse-mode automatic differentiation over dense numpy tensors.

A deliberately small tape: tensors record their parents together with a
vector-Jacobian closure, and `backward` replays the tape in reverse
topological order. The primitive set is exactly what the material field and
shading chain need; there is no fusion, no higher-order support, and no GPU
path. All kernels defer to numpy, so repeated evaluation of the same graph is
bitwise reproducible within one build.

Subgradient conventions (pinned so gradient tests are deterministic):
relu'(0) = 0, |x|' at 0 = 0, and clamp contributes zero gradient at and
beyond its boundaries.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_node_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes cannot be combined; names the offending node."""


class GraphStateError(RuntimeError):
    """Raised when backward is requested before a forward evaluation exists."""


def _as_array(value, dtype=None) -> np.ndarray:
    arr = np.asarray(value)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A dense array plus an optional tape record.

    `parents` holds (tensor, vjp) pairs; `vjp` maps the gradient at this node
    to the contribution for that parent. Leaves (no parents) with
    requires_grad=True are the differentiable inputs.
    """

    __slots__ = ("data", "requires_grad", "grad", "parents", "op", "node_id")

    # defer mixed ndarray/Tensor arithmetic to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 parents: Sequence[tuple["Tensor", Callable]] = (), op: str = "leaf"):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p, _ in parents)
        self.grad: np.ndarray | None = None
        self.parents = tuple((p, fn) for p, fn in parents if p.requires_grad)
        self.op = op
        self.node_id = next(_node_ids)

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape}, grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, op="detach")

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def backward(self, seed=None) -> dict[int, np.ndarray]:
        return backward(self, seed)


def tensor(value, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(value, requires_grad=requires_grad, dtype=dtype)


def _lift(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(name: str, a, b, fwd, vjp_a, vjp_b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    try:
        out = fwd(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(
            f"{name}: cannot combine shapes {a.shape} and {b.shape} "
            f"(nodes #{a.node_id}, #{b.node_id})") from exc
    return Tensor(
        out,
        parents=((a, lambda g: _unbroadcast(vjp_a(g, a.data, b.data, out), a.shape)),
                 (b, lambda g: _unbroadcast(vjp_b(g, a.data, b.data, out), b.shape))),
        op=name)


# -- arithmetic primitives ---------------------------------------------------

def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add,
                   lambda g, x, y, o: g,
                   lambda g, x, y, o: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract,
                   lambda g, x, y, o: g,
                   lambda g, x, y, o: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply,
                   lambda g, x, y, o: g * y,
                   lambda g, x, y, o: g * x)


def div(a, b) -> Tensor:
    return _binary("div", a, b, np.divide,
                   lambda g, x, y, o: g / y,
                   lambda g, x, y, o: -g * x / (y * y))


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim < 1 or b.data.ndim < 1 or a.shape[-1] != b.shape[0 if b.data.ndim == 1 else -2]:
        raise ShapeError(
            f"matmul: inner dimensions of {a.shape} and {b.shape} disagree "
            f"(nodes #{a.node_id}, #{b.node_id})")
    out = a.data @ b.data

    def vjp_a(g):
        if b.data.ndim == 1:
            return np.outer(g, b.data) if a.data.ndim == 2 else g * b.data
        return np.atleast_2d(g) @ b.data.swapaxes(-1, -2) if a.data.ndim > 1 else (b.data @ g)

    def vjp_b(g):
        if a.data.ndim == 1:
            return np.outer(a.data, g) if b.data.ndim == 2 else g * a.data
        return a.data.swapaxes(-1, -2) @ np.atleast_2d(g) if b.data.ndim > 1 else (g @ a.data)

    return Tensor(out, parents=((a, vjp_a), (b, vjp_b)), op="matmul")


# -- elementwise nonlinearities ----------------------------------------------

def _unary(name: str, a, fwd, vjp) -> Tensor:
    a = _lift(a)
    out = fwd(a.data)
    return Tensor(out, parents=((a, lambda g: vjp(g, a.data, out)),), op=name)


def exp(a) -> Tensor:
    return _unary("exp", a, np.exp, lambda g, x, o: g * o)


def log(a) -> Tensor:
    return _unary("log", a, np.log, lambda g, x, o: g / x)


def sqrt(a) -> Tensor:
    return _unary("sqrt", a, np.sqrt, lambda g, x, o: g * 0.5 / o)


def power(a, exponent: float) -> Tensor:
    """a ** exponent for a constant exponent."""
    e = float(exponent)
    return _unary(f"pow[{e}]", a, lambda x: np.power(x, e),
                  lambda g, x, o: g * e * np.power(x, e - 1.0))


def sin(a) -> Tensor:
    return _unary("sin", a, np.sin, lambda g, x, o: g * np.cos(x))


def relu(a) -> Tensor:
    return _unary("relu", a, lambda x: np.maximum(x, 0.0),
                  lambda g, x, o: g * (x > 0.0))


def sigmoid(a) -> Tensor:
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    return _unary("sigmoid", a, fwd, lambda g, x, o: g * o * (1.0 - o))


def absolute(a) -> Tensor:
    return _unary("abs", a, np.abs, lambda g, x, o: g * np.sign(x))


def clamp(a, lo: float, hi: float) -> Tensor:
    # Zero subgradient at and beyond the boundaries.
    return _unary(f"clamp[{lo},{hi}]", a, lambda x: np.clip(x, lo, hi),
                  lambda g, x, o: g * ((x > lo) & (x < hi)))


# -- shape / reduction primitives --------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return Tensor(out, parents=((a, vjp),), op="sum")


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    out = a.data.reshape(shape)
    return Tensor(out, parents=((a, lambda g: g.reshape(a.shape)),), op="reshape")


def broadcast_to(a, shape) -> Tensor:
    a = _lift(a)
    out = np.broadcast_to(a.data, shape).copy()
    return Tensor(out, parents=((a, lambda g: _unbroadcast(g, a.shape)),), op="broadcast")


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [_lift(t) for t in tensors]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(index)]
        return vjp

    return Tensor(out, parents=tuple((p, make_vjp(i)) for i, p in enumerate(parts)), op="concat")


def getitem(a, key) -> Tensor:
    a = _lift(a)
    out = a.data[key]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return full

    return Tensor(out, parents=((a, vjp),), op="getitem")


def gather(table, indices) -> Tensor:
    """Row lookup `table[indices]` along axis 0, differentiable w.r.t. table.

    `indices` is a constant integer array; duplicate indices accumulate in the
    backward pass (np.add.at), which keeps hash-table collisions correct.
    """
    table = _lift(table)
    idx = np.asarray(indices)
    if idx.dtype.kind not in "iu":
        raise ShapeError(f"gather: indices must be integers, got {idx.dtype} "
                         f"(node #{table.node_id})")
    out = table.data[idx]

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return full

    return Tensor(out, parents=((table, vjp),), op="gather")


# -- backward ----------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.node_id not in seen:
                stack.append((parent, False))
    return order


def backward(output: Tensor, seed=None) -> dict[int, np.ndarray]:
    """Accumulate d(seed . output)/d(leaf) for every requires_grad leaf.

    Returns {leaf node_id: gradient array} and adds into each leaf's `.grad`.
    The seed defaults to ones (sum of outputs).
    """
    if not output.requires_grad:
        raise GraphStateError("backward: output does not depend on any "
                              "requires_grad tensor")
    if seed is None:
        seed_arr = np.ones_like(output.data)
    else:
        seed_arr = seed.data if isinstance(seed, Tensor) else np.asarray(seed, dtype=output.dtype)
        if seed_arr.shape != output.data.shape:
            raise ShapeError(f"backward: seed shape {seed_arr.shape} does not match "
                             f"output shape {output.data.shape} (node #{output.node_id})")

    adjoint: dict[int, np.ndarray] = {output.node_id: seed_arr}
    leaf_grads: dict[int, np.ndarray] = {}
    for node in reversed(_topo_order(output)):
        g = adjoint.pop(node.node_id, None)
        if g is None:
            continue
        if node.is_leaf:
            leaf_grads[node.node_id] = g
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, vjp in node.parents:
            contribution = vjp(g)
            prev = adjoint.get(parent.node_id)
            adjoint[parent.node_id] = contribution if prev is None else prev + contribution
    return leaf_grads


class Function:
    """Reusable graph: a builder callable plus declared input shapes.

    `forward` traces the builder eagerly and retains the output tape so a
    subsequent `backward` can be seeded; calling backward first is a state
    error per the evaluation contract.
    """

    def __init__(self, builder: Callable[..., Tensor], input_shapes: Sequence[tuple[int, ...]] | None = None):
        self.builder = builder
        self.input_shapes = [tuple(s) for s in input_shapes] if input_shapes is not None else None
        self._inputs: list[Tensor] | None = None
        self._output: Tensor | None = None

    def forward(self, *inputs: Tensor) -> Tensor:
        if self.input_shapes is not None:
            if len(inputs) != len(self.input_shapes):
                raise ShapeError(f"forward: expected {len(self.input_shapes)} inputs, "
                                 f"got {len(inputs)}")
            for i, (t, s) in enumerate(zip(inputs, self.input_shapes)):
                if t.shape != s:
                    raise ShapeError(f"forward: input {i} has shape {t.shape}, "
                                     f"declared {s} (node #{t.node_id})")
        self._inputs = list(inputs)
        self._output = self.builder(*inputs)
        return self._output

    def backward(self, seed=None) -> list[np.ndarray | None]:
        if self._output is None:
            raise GraphStateError("backward before forward")
        grads = backward(self._output, seed)
        return [grads.get(t.node_id) for t in self._inputs]
