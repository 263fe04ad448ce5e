"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps an ndarray. Primitive operations evaluate eagerly and,
while a ``Tape`` is active, record how to push gradients back to their
inputs. ``Tape.backward`` replays the recording in reverse creation order,
which is a valid topological order because an operation can only consume
tensors that already exist. With no active tape the same primitives run in
forward-only mode, which keeps inference cheap.

All reductions and normalizations operate on the trailing axis by default,
so the same model code works for a single example ``(d,)`` and for a batch
``(batch, d)``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_TAPE_STACK: list["Tape"] = []
_CHECKED = False


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive operation."""

    def __init__(self, primitive: str, *shapes):
        self.primitive = primitive
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{primitive}: incompatible shapes {rendered}")


def set_checked(enabled: bool) -> None:
    """Toggle NaN/Inf detection after every primitive (and inside Adam)."""
    global _CHECKED
    _CHECKED = bool(enabled)


def is_checked() -> bool:
    return _CHECKED


class Tensor:
    """Dense float array, optionally tracked as a node in a computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(shape, rng: np.random.Generator, scale: float = 0.08,
              name: str | None = None, dtype=DEFAULT_DTYPE) -> Tensor:
    """Trainable tensor initialized uniform(-scale, scale)."""
    data = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True, name=name)


class Node:
    """One recorded primitive: its inputs, its output, and the backward rule."""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 backward_fn: Callable[[np.ndarray], tuple]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitives; creation order is topological order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def clear(self) -> None:
        self.nodes.clear()

    def backward(self, root: Tensor, params: Sequence[Tensor] | None = None):
        """Gradients of the scalar ``root`` w.r.t. everything on the tape.

        Walks the recorded nodes once, in reverse order, accumulating into a
        per-tensor gradient; multiple consumers of a tensor therefore sum.
        Sets ``.grad`` on every tensor that requires gradients. When
        ``params`` is given, additionally returns their gradient arrays in
        order, with zero arrays for parameters the graph never touched.
        """
        if root.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {root.shape}")
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            out_grad = grads.get(id(node.output))
            if out_grad is None:
                continue
            for tensor, grad in zip(node.inputs, node.backward_fn(out_grad)):
                if grad is None or not tensor.requires_grad:
                    continue
                seen = grads.get(id(tensor))
                grads[id(tensor)] = grad if seen is None else seen + grad
        for node in self.nodes:
            for tensor in node.inputs + (node.output,):
                if tensor.requires_grad:
                    tensor.grad = grads.get(id(tensor))
        if root.requires_grad:
            root.grad = grads[id(root)]
        if params is not None:
            return [np.array(grads[id(p)]) if id(p) in grads else np.zeros_like(p.data)
                    for p in params]
        return None


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
            backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    if _CHECKED and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    tape = _active_tape()
    if tape is not None and requires:
        tape.nodes.append(Node(op, inputs, out, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (undoes numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(ax for ax, n in enumerate(shape) if n == 1 and grad.shape[ax] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", (a, b), out, backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", (a, b), out, backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _record("mul", (a, b), out, backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data / b.data
    except ValueError:
        raise ShapeError("div", a.shape, b.shape) from None
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g / bd, a.shape),
                _unbroadcast(-g * ad / (bd * bd), b.shape))

    return _record("div", (a, b), out, backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (-g,)

    return _record("neg", (a,), -a.data, backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix/vector product for operands of rank 1 or 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    ad, bd = a.data, b.data
    a_ndim, b_ndim = a.ndim, b.ndim

    def backward(g):
        if a_ndim == 2 and b_ndim == 2:
            return g @ bd.T, ad.T @ g
        if a_ndim == 2 and b_ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if a_ndim == 1 and b_ndim == 2:
            return bd @ g, np.outer(ad, g)
        return g * bd, g * ad

    return _record("matmul", (a, b), out, backward)


def linear(x, weight) -> Tensor:
    """``x @ weight.T`` for ``weight`` of shape (out_dim, in_dim).

    ``x`` may be a single vector ``(in,)`` or a batch ``(batch, in)``. This is
    the hot path for all gate and projection layers, so it avoids explicit
    transpose nodes.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != weight.shape[1]:
        raise ShapeError("linear", x.shape, weight.shape)
    out = x.data @ weight.data.T
    xd, wd = x.data, weight.data
    batched = x.ndim == 2

    def backward(g):
        gx = g @ wd
        gw = g.T @ xd if batched else np.outer(g, xd)
        return gx, gw

    return _record("linear", (x, weight), out, backward)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # tanh form is stable for large |x|
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _record("sigmoid", (x,), out, backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _record("tanh", (x,), out, backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _record("exp", (x,), out, backward)


def log(x) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)
    xd = x.data

    def backward(g):
        return (g / xd,)

    return _record("log", (x,), out, backward)


def softplus(x) -> Tensor:
    """log(1 + exp(x)), computed without overflow; strictly positive."""
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    xd = x.data

    def backward(g):
        return (g * 0.5 * (np.tanh(0.5 * xd) + 1.0),)

    return _record("softplus", (x,), out, backward)


# ---------------------------------------------------------------------------
# reductions and normalizations
# ---------------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.shape

    def backward(g):
        return (_expand_reduced(np.asarray(g), shape, axis, keepdims).copy(),)

    return _record("sum", (x,), out, backward)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    shape = x.shape
    count = x.size if axis is None else shape[axis]

    def backward(g):
        return (_expand_reduced(np.asarray(g) / count, shape, axis, keepdims).copy(),)

    return _record("mean", (x,), out, backward)


def softmax(x, axis: int = -1) -> Tensor:
    """Exponential normalization along ``axis``, shifted by the max for stability."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _record("softmax", (x,), out, backward)


def logsumexp(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """log(sum(exp(x))) along ``axis`` via the max-subtraction trick."""
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    total = e.sum(axis=axis, keepdims=True)
    out = m + np.log(total)
    soft = e / total
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _record("logsumexp", (x,), out, backward)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ValueError("concat of zero tensors")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", tensors, out, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ValueError("stack of zero tensors")
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack", *(t.shape for t in tensors)) from None

    def backward(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(tensors)))

    return _record("stack", tensors, out, backward)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]
    shape = x.shape
    dtype = x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _record("slice", (x,), out, backward)


def zeros(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))
