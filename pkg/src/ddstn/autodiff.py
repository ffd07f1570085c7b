"""Tape-style reverse-mode differentiation over dense float64 arrays.

A :class:`Graph` is an append-only list of nodes. Every operation appends a
node whose id is larger than the ids of its parents, so the list order is a
topological order and :func:`backward` simply walks it in reverse.

Broadcasting is restricted to scalar-with-tensor; anything else needs an
explicit :func:`reshape` or a :func:`matmul` against a ones vector.

Example
-------
>>> g = Graph()
>>> x = g.leaf([3.0])
>>> y = sum(square(x))
>>> backward(y, [x])[0]
array([6.])
"""

from __future__ import annotations

from numbers import Real
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ContractError, DimensionError

__all__ = [
    "Graph",
    "Tensor",
    "add",
    "backward",
    "clamp_min0",
    "concat",
    "conv2d_valid",
    "exp",
    "matmul",
    "maxpool2",
    "mean",
    "mul",
    "neg",
    "relu",
    "reshape",
    "rows",
    "scale",
    "sqrt",
    "square",
    "sub",
    "sum",
    "transpose",
]


class Tensor:
    """One node of a :class:`Graph`: a cached float64 value plus its lineage."""

    __slots__ = ("graph", "id", "op", "parents", "value", "requires_grad", "grad", "_backward")
    __array_priority__ = 100.0

    def __init__(self, graph, node_id, op, parents, value, requires_grad, backward_fn):
        self.graph = graph
        self.id = node_id
        self.op = op
        self.parents = parents
        self.value = value
        self.requires_grad = requires_grad
        self.grad = None
        self._backward = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.value.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def __repr__(self) -> str:
        return f"Tensor(id={self.id}, op={self.op!r}, shape={self.shape})"

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
        if not isinstance(other, Real):
            raise DimensionError("division is only defined by a Python scalar")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class Graph:
    """Append-only computation tape.

    Node ids are list positions. Graphs are cheap and meant to be rebuilt for
    every training step.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, op, parents, value, backward_fn) -> Tensor:
        requires_grad = any(p.requires_grad for p in parents)
        node = Tensor(
            self,
            len(self.nodes),
            op,
            tuple(p.id for p in parents),
            value,
            requires_grad,
            backward_fn if requires_grad else None,
        )
        self.nodes.append(node)
        return node

    def leaf(self, value, requires_grad: bool = True) -> Tensor:
        """Register an input array. Leaves with ``requires_grad`` receive gradients."""
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ContractError("leaf values must be finite")
        node = Tensor(self, len(self.nodes), "leaf", (), arr, requires_grad, None)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Tensor:
        return self.leaf(value, requires_grad=False)

    def lift(self, value) -> Tensor:
        if isinstance(value, Tensor):
            if value.graph is not self:
                raise ContractError("tensors from different graphs cannot be combined")
            return value
        return self.constant(value)


def _graph_of(*xs) -> Graph:
    for x in xs:
        if isinstance(x, Tensor):
            return x.graph
    return Graph()


def _lift_all(*xs) -> list[Tensor]:
    if len(xs) == 1 and isinstance(xs[0], Tensor):
        return [xs[0]]
    g = _graph_of(*xs)
    return [g.lift(x) for x in xs]


def _is_scalar(t: Tensor) -> bool:
    return t.value.ndim == 0


def _unary(x: Tensor, op: str, value: np.ndarray, grad_fn: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    return x.graph._append(op, (x,), value, lambda g: (grad_fn(g),))


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(grad: np.ndarray, t: Tensor) -> np.ndarray:
    # undo scalar broadcasting
    if _is_scalar(t) and grad.ndim > 0:
        return np.asarray(grad.sum())
    return grad


def _scalarize(x):
    if isinstance(x, Real) and not isinstance(x, bool):
        return np.float64(x)
    return x


def add(a, b) -> Tensor:
    a, b = _lift_all(_scalarize(a), _scalarize(b))
    _binary_shapes(a, b, "add")
    return a.graph._append(
        "add", (a, b), a.value + b.value, lambda g: (_reduce_to(g, a), _reduce_to(g, b))
    )


def sub(a, b) -> Tensor:
    a, b = _lift_all(_scalarize(a), _scalarize(b))
    _binary_shapes(a, b, "sub")
    return a.graph._append(
        "sub", (a, b), a.value - b.value, lambda g: (_reduce_to(g, a), _reduce_to(-g, b))
    )


def mul(a, b) -> Tensor:
    a, b = _lift_all(_scalarize(a), _scalarize(b))
    _binary_shapes(a, b, "mul")
    av, bv = a.value, b.value
    return a.graph._append(
        "mul", (a, b), av * bv, lambda g: (_reduce_to(g * bv, a), _reduce_to(g * av, b))
    )


def scale(x, c: float) -> Tensor:
    c = float(c)
    (x,) = _lift_all(x)
    return _unary(x, "scale", x.value * c, lambda g: g * c)


def neg(x) -> Tensor:
    return scale(x, -1.0)


def relu(x) -> Tensor:
    """max(0, x); the subgradient at 0 is taken as 0."""
    (x,) = _lift_all(x)
    mask = x.value > 0
    return _unary(x, "relu", np.where(mask, x.value, 0.0), lambda g: g * mask)


def clamp_min0(x) -> Tensor:
    """Same map as :func:`relu`, tagged separately for slack clamps."""
    (x,) = _lift_all(x)
    mask = x.value > 0
    return _unary(x, "clamp_min0", np.where(mask, x.value, 0.0), lambda g: g * mask)


def square(x) -> Tensor:
    (x,) = _lift_all(x)
    v = x.value
    return _unary(x, "square", v * v, lambda g: 2.0 * v * g)


def sqrt(x) -> Tensor:
    """Elementwise square root; gradient at exactly 0 is defined as 0."""
    (x,) = _lift_all(x)
    if np.any(x.value < 0):
        raise ContractError("sqrt of a negative value")
    out = np.sqrt(x.value)
    safe = np.where(out > 0, out, 1.0)

    def grad(g):
        return np.where(out > 0, g / (2.0 * safe), 0.0)

    return _unary(x, "sqrt", out, grad)


def exp(x) -> Tensor:
    (x,) = _lift_all(x)
    out = np.exp(x.value)
    return _unary(x, "exp", out, lambda g: g * out)


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    (x,) = _lift_all(x)
    shape = x.shape
    if axis is None:
        return _unary(x, "sum", np.asarray(x.value.sum()), lambda g: np.broadcast_to(g, shape).copy())
    axis = axis % x.ndim
    out = x.value.sum(axis=axis)
    return _unary(
        x, "sum", out, lambda g: np.broadcast_to(np.expand_dims(g, axis), shape).copy()
    )


def mean(x, axis: int | None = None) -> Tensor:
    (x,) = _lift_all(x)
    if x.value.size == 0:
        raise ContractError("mean of an empty tensor")
    shape = x.shape
    if axis is None:
        c = 1.0 / x.value.size
        return _unary(x, "mean", np.asarray(x.value.sum() * c), lambda g: np.full(shape, g * c))
    axis = axis % x.ndim
    c = 1.0 / shape[axis]
    return _unary(
        x, "mean", x.value.sum(axis=axis) * c,
        lambda g: np.broadcast_to(np.expand_dims(g * c, axis), shape).copy(),
    )


def reshape(x, shape: Sequence[int]) -> Tensor:
    (x,) = _lift_all(x)
    old = x.shape
    try:
        out = x.value.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} into {tuple(shape)}") from exc
    return _unary(x, "reshape", out, lambda g: g.reshape(old))


def transpose(x) -> Tensor:
    (x,) = _lift_all(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {x.shape}")
    return _unary(x, "transpose", x.value.T.copy(), lambda g: g.T)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; all other dimensions must agree."""
    parts = _lift_all(*parts)
    if not parts:
        raise ContractError("concat of nothing")
    try:
        out = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(
            f"concat: incompatible shapes {[p.shape for p in parts]}"
        ) from exc
    splits = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def grad(g):
        return tuple(np.split(g, splits, axis=axis))

    return parts[0].graph._append("concat", tuple(parts), out, grad)


def rows(x, start: int, stop: int) -> Tensor:
    """Slice ``x[start:stop]`` along the first axis."""
    (x,) = _lift_all(x)
    if not 0 <= start <= stop <= x.shape[0]:
        raise DimensionError(f"rows: [{start}:{stop}] out of range for shape {x.shape}")
    shape = x.shape

    def grad(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return full

    return _unary(x, "rows", x.value[start:stop], grad)


def matmul(a, b) -> Tensor:
    a, b = _lift_all(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return a.graph._append("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def conv2d_valid(x, kernel, bias=None) -> Tensor:
    """Valid cross-correlation, stride 1.

    Accepts either a single ``H x W`` image with a ``k x k`` kernel, or a batch
    ``n x c_in x H x W`` with a kernel bank ``c_out x c_in x k x k`` and an
    optional per-output-channel ``bias``.
    """
    args = [x, kernel] if bias is None else [x, kernel, bias]
    tensors = _lift_all(*args)
    x, kernel = tensors[0], tensors[1]
    single = x.ndim == 2
    if single:
        if kernel.ndim != 2:
            raise DimensionError(f"conv2d_valid: kernel {kernel.shape} for image {x.shape}")
        xv = x.value[None, None]
        kv = kernel.value[None, None]
    else:
        if x.ndim != 4 or kernel.ndim != 4 or kernel.shape[1] != x.shape[1]:
            raise DimensionError(f"conv2d_valid: kernel {kernel.shape} for input {x.shape}")
        xv, kv = x.value, kernel.value
    k = kv.shape[-1]
    if kv.shape[-2] != k:
        raise DimensionError(f"conv2d_valid: kernel must be square, got {kernel.shape}")
    n, c_in, h, w = xv.shape
    if k > h or k > w:
        raise DimensionError(f"conv2d_valid: kernel {kernel.shape} larger than input {x.shape}")
    c_out = kv.shape[0]
    ho, wo = h - k + 1, w - k + 1
    # cols: n, ho, wo, c_in*k*k
    cols = sliding_window_view(xv, (k, k), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5).reshape(
        n, ho, wo, c_in * k * k
    )
    kmat = kv.reshape(c_out, -1)
    out = (cols @ kmat.T).transpose(0, 3, 1, 2)
    has_bias = len(tensors) == 3
    if has_bias:
        b = tensors[2]
        if b.shape != (c_out,):
            raise DimensionError(f"conv2d_valid: bias {b.shape} for {c_out} channels")
        out = out + b.value[None, :, None, None]
    if single:
        out = out[0, 0]

    def grad(g):
        g4 = g[None, None] if single else g
        gk = np.einsum("nhwc,nohw->oc", cols, g4, optimize=True).reshape(kv.shape)
        gx = np.zeros_like(xv)
        for u in range(k):
            for v in range(k):
                gx[:, :, u : u + ho, v : v + wo] += np.einsum(
                    "nohw,oc->nchw", g4, kv[:, :, u, v], optimize=True
                )
        if single:
            gx, gk = gx[0, 0], gk[0, 0]
        res = (gx, gk)
        if has_bias:
            res = res + (g4.sum(axis=(0, 2, 3)),)
        return res

    return x.graph._append("conv2d_valid", tuple(tensors), np.ascontiguousarray(out), grad)


def maxpool2(x) -> Tensor:
    """2x2 max pooling with stride 2 over the last two axes; odd edges are dropped."""
    (x,) = _lift_all(x)
    if x.ndim < 2 or x.shape[-1] < 2 or x.shape[-2] < 2:
        raise DimensionError(f"maxpool2: input {x.shape} too small")
    lead = x.shape[:-2]
    h2, w2 = x.shape[-2] // 2, x.shape[-1] // 2
    crop = x.value[..., : 2 * h2, : 2 * w2]
    win = crop.reshape(*lead, h2, 2, w2, 2)
    win = np.moveaxis(win, -3, -2).reshape(*lead, h2, w2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    full_shape = x.shape

    def grad(g):
        gw = np.zeros(win.shape)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gw = gw.reshape(*lead, h2, w2, 2, 2)
        gw = np.moveaxis(gw, -2, -3).reshape(*lead, 2 * h2, 2 * w2)
        gx = np.zeros(full_shape)
        gx[..., : 2 * h2, : 2 * w2] = gw
        return gx

    return _unary(x, "maxpool2", out, grad)


def backward(loss: Tensor, wrt: Sequence[Tensor] | None = None) -> list[np.ndarray]:
    """Propagate d(loss)/d(node) back through the tape.

    Sets ``.grad`` on every node reached and returns the gradients of ``wrt``
    (default: every grad-requiring leaf, in creation order). Leaves the loss
    does not depend on get a zero gradient.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward needs a Tensor")
    if loss.value.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = loss.graph.nodes
    for node in nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(nodes[: loss.id + 1]):
        if node.grad is None or node._backward is None:
            continue
        parent_grads = node._backward(node.grad)
        for pid, pg in zip(node.parents, parent_grads):
            parent = nodes[pid]
            if not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.reshape(pg, parent.shape)
            else:
                parent.grad = parent.grad + np.reshape(pg, parent.shape)
    if wrt is None:
        wrt = [n for n in nodes if n.op == "leaf" and n.requires_grad]
    return [t.grad if t.grad is not None else np.zeros_like(t.value) for t in wrt]
