"""Dense tensors with reverse-mode differentiation.

Every operation returns a new :class:`Tensor`; when any operand requires a
gradient the result records its parents and a closure that pushes the
upstream gradient back to them. Graphs are built eagerly, so a root tensor
is the whole expression DAG.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

DTYPE = np.float64
_compute_dtype = DTYPE


@contextmanager
def compute_dtype(dtype):
    """Temporarily build new tensors in ``dtype`` (training uses float32 for speed)."""
    global _compute_dtype
    saved, _compute_dtype = _compute_dtype, np.dtype(dtype).type
    try:
        yield
    finally:
        _compute_dtype = saved


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=_compute_dtype)


def _power(x: np.ndarray, exponent: float) -> np.ndarray:
    # np.power with a float exponent is ~40x slower than these special cases
    if exponent == 1.0:
        return x
    if exponent == 2.0:
        return x * x
    if exponent == 0.0:
        return np.ones_like(x)
    if exponent == -1.0:
        return 1.0 / x
    if exponent == -2.0:
        return 1.0 / (x * x)
    if exponent == 0.5:
        return np.sqrt(x)
    return x**exponent


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- bookkeeping -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    @staticmethod
    def _make(data, parents, backward) -> Tensor:
        parents = tuple(p for p in parents if isinstance(p, Tensor))
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = grad.copy() if grad.base is not None else grad
        else:
            self.grad = self.grad + grad

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = _as_array(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic -----------------------------------------

    def __add__(self, other) -> Tensor:
        other_data = other.data if isinstance(other, Tensor) else _as_array(other)

        def backward(g):
            self._accumulate(_unbroadcast(g, self.shape))
            if isinstance(other, Tensor):
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._make(self.data + other_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return Tensor._make(-self.data, (self,), lambda g: self._accumulate(-g))

    def __sub__(self, other) -> Tensor:
        return self + (-other if isinstance(other, Tensor) else -_as_array(other))

    def __rsub__(self, other) -> Tensor:
        return (-self) + other

    def __mul__(self, other) -> Tensor:
        other_data = other.data if isinstance(other, Tensor) else _as_array(other)

        def backward(g):
            self._accumulate(_unbroadcast(g * other_data, self.shape))
            if isinstance(other, Tensor):
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._make(self.data * other_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        if isinstance(other, Tensor):
            return self * other ** -1.0
        return self * (1.0 / _as_array(other))

    def __pow__(self, exponent: float) -> Tensor:
        exponent = float(exponent)
        out_data = _power(self.data, exponent)

        def backward(g):
            self._accumulate(g * exponent * _power(self.data, exponent - 1.0))

        return Tensor._make(out_data, (self,), backward)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index) -> Tensor:
        return take_index(self, index)

    # -- method aliases --------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self) -> Tensor:
        return exp(self)

    def log(self) -> Tensor:
        return log(self)

    def tanh(self) -> Tensor:
        return tanh(self)


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


# -- linear algebra and shape ops --------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    # a 2-d right operand is applied as one GEMM over all leading axes of a
    flat = b.ndim == 2 and a.ndim > 2

    def backward(g):
        if a.requires_grad:
            if flat:
                a._accumulate((g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape))
            else:
                a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2:
                flat_a = a.data.reshape(-1, a.shape[-1])
                b._accumulate(flat_a.T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    if flat:
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out = a.data @ b.data
    return Tensor._make(out, (a, b), backward)


def reshape(x: Tensor, shape) -> Tensor:
    x = constant(x)
    return Tensor._make(x.data.reshape(shape), (x,), lambda g: x._accumulate(g.reshape(x.shape)))


def transpose(x: Tensor, axes=None) -> Tensor:
    x = constant(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return Tensor._make(x.data.transpose(axes), (x,), lambda g: x._accumulate(g.transpose(inverse)))


def broadcast_to(x: Tensor, shape) -> Tensor:
    x = constant(x)
    return Tensor._make(
        np.broadcast_to(x.data, shape).copy(), (x,), lambda g: x._accumulate(_unbroadcast(g, x.shape))
    )


def take_index(x: Tensor, index) -> Tensor:
    """Basic or advanced indexing; the gradient scatters back with accumulation."""
    x = constant(x)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        x._accumulate(full)

    return Tensor._make(x.data[index], (x,), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by the integer array ``ids``."""
    table = constant(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError("embedding id out of range")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        table._accumulate(full)

    return Tensor._make(table.data[ids], (table,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [constant(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# -- reductions ----------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(a % len(shape) for a in axes)
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = constant(x)
    return Tensor._make(
        x.data.sum(axis=axis, keepdims=keepdims),
        (x,),
        lambda g: x._accumulate(_expand_reduced(g, x.shape, axis, keepdims)),
    )


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = constant(x)
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis, keepdims) * (1.0 / count)


# -- nonlinearities ------------------------------------------------------------


def exp(x: Tensor) -> Tensor:
    x = constant(x)
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: x._accumulate(g * out))


def log(x: Tensor) -> Tensor:
    x = constant(x)
    return Tensor._make(np.log(x.data), (x,), lambda g: x._accumulate(g / x.data))


def sqrt(x: Tensor) -> Tensor:
    x = constant(x)
    out = np.sqrt(x.data)
    return Tensor._make(out, (x,), lambda g: x._accumulate(g * 0.5 / out))


def tanh(x: Tensor) -> Tensor:
    x = constant(x)
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: x._accumulate(g * (1.0 - out * out)))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = constant(x)
    x2 = x.data * x.data
    u = _GELU_C * x.data * (1.0 + 0.044715 * x2)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        x._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du))

    return Tensor._make(out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = constant(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor._make(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = constant(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        x._accumulate(g - probs * g.sum(axis=axis, keepdims=True))

    return Tensor._make(out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = constant(x), constant(gamma), constant(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data
            dx = inv_std * (
                gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            )
            x._accumulate(dx)

    return Tensor._make(out, (x, gamma, beta), backward)


def l2_norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at the origin is zero."""
    x = constant(x)
    out = np.sqrt((x.data * x.data).sum(axis=axis))

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        x._accumulate(x.data * np.expand_dims(scale, axis))

    return Tensor._make(out, (x,), backward)
