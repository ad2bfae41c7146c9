"""
A small reverse-mode differentiation tape over float64 numpy arrays.

Every op records its parents and a closure mapping the output gradient to one gradient per
parent. `Tensor.backward()` walks the tape in reverse topological order and accumulates into
`.grad`. Broadcasting follows numpy; gradients are summed back to each parent's shape.
"""

import threading
from contextlib import contextmanager
from enum import Enum, auto
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt

Array = npt.NDArray[np.float64]
Operand = Union["Tensor", float, int, Array]
BackwardFn = Callable[[Array], Sequence[Optional[Array]]]

SIGMOID_CLAMP = 1e-12

# Tape recording is switched per thread.
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording the tape."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    def __init__(
        self,
        data: Union[Array, float, Sequence],
        parents: tuple["Tensor", ...] = (),
        backward: Optional[BackwardFn] = None,
        requires_grad: bool = False,
    ) -> None:
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.grad: Optional[Array] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        if grad_enabled() and backward is not None and any(p.requires_grad for p in parents):
            self.requires_grad = True
            self._parents = parents
            self._backward = backward

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[Array] = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)

        order = _topological_order(self)
        grads: dict[int, Array] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # Operators

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return add(self, neg(_lift(other)))

    def __rsub__(self, other: Operand) -> "Tensor":
        return add(other, neg(self))

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: Operand) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return getitem(self, index)

    def sum(self, axis: Optional[Union[int, tuple[int, ...]]] = None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return tsum(self, axis, keepdims) / float(count)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes)


def _topological_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS: recurrent graphs are deeper than the interpreter's recursion limit.
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _lift(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise ops


def add(a: Operand, b: Operand) -> Tensor:
    ta, tb = _lift(a), _lift(b)

    def backward(g: Array):
        return _unbroadcast(g, ta.shape), _unbroadcast(g, tb.shape)

    return Tensor(ta.data + tb.data, (ta, tb), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, (a,), lambda g: (-g,))


def mul(a: Operand, b: Operand) -> Tensor:
    ta, tb = _lift(a), _lift(b)

    def backward(g: Array):
        return _unbroadcast(g * tb.data, ta.shape), _unbroadcast(g * ta.data, tb.shape)

    return Tensor(ta.data * tb.data, (ta, tb), backward)


def div(a: Operand, b: Operand) -> Tensor:
    ta, tb = _lift(a), _lift(b)

    def backward(g: Array):
        return (
            _unbroadcast(g / tb.data, ta.shape),
            _unbroadcast(-g * ta.data / (tb.data * tb.data), tb.shape),
        )

    return Tensor(ta.data / tb.data, (ta, tb), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return Tensor(np.abs(a.data), (a,), lambda g: (g * sign,))


def sigmoid(a: Tensor) -> Tensor:
    out = np.clip(1.0 / (1.0 + np.exp(-a.data)), SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
    return Tensor(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g: Array):
        # Subgradient 0 at the origin keeps distance scores differentiable on identical rows.
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return Tensor(out, (a,), backward)


# Shape ops


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g: Array):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    original = a.shape
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return Tensor(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    def backward(g: Array):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return Tensor(a.data[index], (a,), backward)


def take_rows(table: Tensor, indices: npt.NDArray[np.int64]) -> Tensor:
    """Embedding lookup: out[...] = table[indices[...]]."""
    shape = table.shape

    def backward(g: Array):
        full = np.zeros(shape)
        np.add.at(full, indices, g)
        return (full,)

    return Tensor(table.data[indices], (table,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: Array):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    def backward(g: Array):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


# Linear algebra and normalisers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least two dimensions")

    def backward(g: Array):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor(a.data @ b.data, (a, b), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: Array):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor(out, (a,), backward)


def cross_entropy(logits: Tensor, targets: npt.NDArray[np.int64]) -> Tensor:
    """Mean softmax cross-entropy of (rows, classes) logits against integer targets."""
    if logits.ndim != 2 or logits.shape[0] != len(targets):
        raise ValueError(f"logits {logits.shape} do not match {len(targets)} targets")
    rows = np.arange(len(targets))
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    losses = log_norm - shifted[rows, targets]
    probs = np.exp(shifted - log_norm[:, None])

    def backward(g: Array):
        d = probs.copy()
        d[rows, targets] -= 1.0
        return (d * (g / len(targets)),)

    return Tensor(losses.mean(), (logits,), backward)


class ParamGroup(Enum):
    EMBEDDING = auto()
    OTHER = auto()


class Parameter(Tensor):
    """A trainable leaf with a stable identifier and a learning-rate group."""

    def __init__(
        self,
        value: Array,
        name: str,
        group: ParamGroup = ParamGroup.OTHER,
        trainable: bool = True,
    ) -> None:
        super().__init__(np.array(value, dtype=np.float64), requires_grad=trainable)
        self.name = name
        self.group = group
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape}, group={self.group.name})"

    @property
    def value(self) -> Array:
        return self.data

    @property
    def gradient(self) -> Array:
        return np.zeros_like(self.data) if self.grad is None else self.grad
