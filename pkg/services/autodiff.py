"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every operation builds a graph node only when gradients are enabled and at
least one operand requires a gradient. Gradients accumulate on leaf tensors
across ``backward`` calls; callers clear them between optimisation steps.
"""
from __future__ import annotations

import contextlib
from contextvars import ContextVar
from typing import Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

Scalar = Union[int, float]
Operand = Union["Tensor", Scalar, np.ndarray]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_grad_enabled: ContextVar[bool] = ContextVar("grad_enabled", default=True)


class AutodiffError(ValueError):
    """Raised for shape violations and misuse of the gradient graph."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data: Operand, *, requires_grad: bool = False, name: Optional[str] = None):
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise AutodiffError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return self.__mul__(other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key) -> "Tensor":
        return take(self, key)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording graph nodes."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: Tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if is_grad_enabled() and any(parent.requires_grad for parent in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# --- broadcasting ----------------------------------------------------------------

def _core_shape(shape: Tuple[int, ...]) -> Tuple[int, ...]:
    index = 0
    while index < len(shape) and shape[index] == 1:
        index += 1
    return shape[index:]


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    for big, small in ((a.shape, b.shape), (b.shape, a.shape)):
        core = _core_shape(small)
        if len(core) <= len(big) and len(small) <= len(big) and big[len(big) - len(core):] == core:
            return
    raise AutodiffError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    core = _core_shape(shape)
    if core:
        reduced = grad.reshape(-1, *core).sum(axis=0)
    else:
        reduced = np.asarray(grad.sum())
    return reduced.reshape(shape)


# --- elementwise -----------------------------------------------------------------

def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(grad: np.ndarray):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return _node(a.data + b.data, (a, b), backward)


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(grad: np.ndarray):
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)

    return _node(a.data - b.data, (a, b), backward)


def mul(a: Operand, b: Operand) -> Tensor:
    """Elementwise product."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(grad: np.ndarray):
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)

    return _node(a.data * b.data, (a, b), backward)


mul_elementwise = mul


def scale(a: Operand, factor: Scalar) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)

    def backward(grad: np.ndarray):
        return (grad * factor,)

    return _node(a.data * factor, (a,), backward)


def tanh(x: Operand) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(grad: np.ndarray):
        return (grad * (1.0 - y * y),)

    return _node(y, (x,), backward)


def sigmoid(x: Operand) -> Tensor:
    x = as_tensor(x)
    e = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(grad: np.ndarray):
        return (grad * y * (1.0 - y),)

    return _node(y, (x,), backward)


def relu(x: Operand) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(grad: np.ndarray):
        return (grad * mask,)

    return _node(np.where(mask, x.data, 0.0), (x,), backward)


# --- structural ------------------------------------------------------------------

def matmul(a: Operand, b: Operand) -> Tensor:
    """Matrix product of 2-D operands, or a stack of them against a shared or
    equally stacked right operand."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (2, 3) or b.ndim not in (2, 3) or (b.ndim == 3 and a.ndim != 3):
        raise AutodiffError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise AutodiffError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise AutodiffError(f"matmul: batch dimensions differ {a.shape} @ {b.shape}")

    def backward(grad: np.ndarray):
        grad_a = grad @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            k = a.shape[-1]
            grad_b = a.data.reshape(-1, k).T @ grad.reshape(-1, grad.shape[-1])
        else:
            grad_b = np.swapaxes(a.data, -1, -2) @ grad
        return grad_a, grad_b

    return _node(a.data @ b.data, (a, b), backward)


def transpose(x: Operand) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise AutodiffError(f"transpose: need at least 2 dimensions, got {x.shape}")

    def backward(grad: np.ndarray):
        return (np.swapaxes(grad, -1, -2),)

    return _node(np.swapaxes(x.data, -1, -2).copy(), (x,), backward)


def reshape(x: Operand, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise AutodiffError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc

    def backward(grad: np.ndarray):
        return (grad.reshape(x.shape),)

    return _node(data.copy(), (x,), backward)


def take(x: Operand, key) -> Tensor:
    """Index with numpy semantics; gradients scatter back with ``np.add.at``."""
    x = as_tensor(x)
    data = np.array(x.data[key], dtype=np.float64)

    def backward(grad: np.ndarray):
        full = np.zeros_like(x.data)
        np.add.at(full, key, grad)
        return (full,)

    return _node(data, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise AutodiffError("concat: nothing to concatenate")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise AutodiffError(f"concat: incompatible shapes {shapes}") from exc
    boundaries = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(grad: np.ndarray):
        return tuple(np.split(grad, boundaries, axis=axis))

    return _node(data, tensors, backward)


def sum_all(x: Operand) -> Tensor:
    x = as_tensor(x)

    def backward(grad: np.ndarray):
        return (np.broadcast_to(grad, x.shape).copy(),)

    return _node(np.asarray(x.data.sum()), (x,), backward)


def mean(x: Operand, axis: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size

        def backward_all(grad: np.ndarray):
            return (np.full(x.shape, float(grad) / count),)

        return _node(np.asarray(x.data.mean()), (x,), backward_all)

    count = x.shape[axis]

    def backward(grad: np.ndarray):
        expanded = np.expand_dims(grad, axis) / count
        return (np.broadcast_to(expanded, x.shape).copy(),)

    return _node(x.data.mean(axis=axis), (x,), backward)


# --- normalisation and losses ----------------------------------------------------

def softmax_rows(x: Operand) -> Tensor:
    """Softmax over the last axis, shifted by the row maximum."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(grad: np.ndarray):
        return (y * (grad - (grad * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (x,), backward)


def layer_norm(x: Operand, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then apply
    ``gain`` and ``bias``."""
    x = as_tensor(x)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise AutodiffError(
            f"layer_norm: gain {gain.shape} and bias {bias.shape} must match last axis of {x.shape}"
        )
    centred = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    normed = centred * inv_std

    def backward(grad: np.ndarray):
        grad_normed = grad * gain.data
        grad_x = inv_std * (
            grad_normed
            - grad_normed.mean(axis=-1, keepdims=True)
            - normed * (grad_normed * normed).mean(axis=-1, keepdims=True)
        )
        grad_gain = (grad * normed).reshape(-1, width).sum(axis=0)
        grad_bias = grad.reshape(-1, width).sum(axis=0)
        return grad_x, grad_gain, grad_bias

    return _node(normed * gain.data + bias.data, (x, gain, bias), backward)


def mse_loss(pred: Tensor, target: Operand) -> Tensor:
    """Mean over elements of the squared difference."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise AutodiffError(f"mse_loss: prediction {pred.shape} and target {target.shape} differ")
    if target.requires_grad:
        raise AutodiffError("mse_loss: target must not require a gradient")
    diff = pred.data - target.data
    count = diff.size

    def backward(grad: np.ndarray):
        return grad * 2.0 * diff / count, None

    return _node(np.asarray((diff * diff).mean()), (pred, target), backward)


# --- backward pass ---------------------------------------------------------------

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.size != 1:
        raise AutodiffError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node.is_leaf:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue
        for parent, parent_grad in zip(node._parents, node._backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
