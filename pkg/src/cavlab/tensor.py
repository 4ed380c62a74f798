"""Reverse-mode autodiff over float64 numpy arrays.

Small define-by-run tape sized for the control networks in this package:
elementwise arithmetic with broadcasting, batched matmul, tanh/relu/exp/log,
reductions, reshape/transpose/concat and min/max gating. Every op checks its
output for NaN/Inf and raises NonFiniteValue, so numerical blowups surface
at the op that produced them.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import NonFiniteValue, ShapeMismatch

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording (rollouts, evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"non-finite values produced by {op}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape of a broadcast operand."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, "tensor construction")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
            out.requires_grad = False
            out._parents = parents
            out._backward_fn = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward_fn = None
        return out

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        data = self.data + other.data

        def backward(grad):
            return _unbroadcast(grad, self.shape), _unbroadcast(grad, other.shape)

        return Tensor._make(data, (self, other), backward, "add")

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        data = self.data * other.data

        def backward(grad):
            return (_unbroadcast(grad * other.data, self.shape),
                    _unbroadcast(grad * self.data, other.shape))

        return Tensor._make(data, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        with np.errstate(all="ignore"):  # NonFiniteValue check reports blowups
            data = self.data / other.data

        def backward(grad):
            return (_unbroadcast(grad / other.data, self.shape),
                    _unbroadcast(-grad * self.data / other.data ** 2, other.shape))

        return Tensor._make(data, (self, other), backward, "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        if not np.isscalar(exponent):
            raise ShapeMismatch("only scalar exponents are supported")
        with np.errstate(all="ignore"):
            data = self.data ** exponent

        def backward(grad):
            return (grad * exponent * self.data ** (exponent - 1),)

        return Tensor._make(data, (self,), backward, "pow")

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeMismatch("matmul operands must have ndim >= 2")
        try:
            data = self.data @ other.data
        except ValueError as exc:
            raise ShapeMismatch(str(exc)) from None

        def backward(grad):
            ga = grad @ np.swapaxes(other.data, -1, -2)
            gb = np.swapaxes(self.data, -1, -2) @ grad
            return _unbroadcast(ga, self.shape), _unbroadcast(gb, other.shape)

        return Tensor._make(data, (self, other), backward, "matmul")

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self):
        with np.errstate(all="ignore"):
            data = np.exp(self.data)

        def backward(grad):
            return (grad * data,)

        return Tensor._make(data, (self,), backward, "exp")

    def log(self):
        with np.errstate(all="ignore"):
            data = np.log(self.data)

        def backward(grad):
            return (grad / self.data,)

        return Tensor._make(data, (self,), backward, "log")

    def tanh(self):
        data = np.tanh(self.data)

        def backward(grad):
            return (grad * (1.0 - data ** 2),)

        return Tensor._make(data, (self,), backward, "tanh")

    def relu(self):
        data = np.maximum(self.data, 0.0)

        def backward(grad):
            return (grad * (self.data > 0.0),)

        return Tensor._make(data, (self,), backward, "relu")

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(grad):
            g = np.asarray(grad)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.shape).copy(),)

        return Tensor._make(np.asarray(data), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- shape ops ---------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        data = self.data.reshape(shape)

        def backward(grad):
            return (grad.reshape(old),)

        return Tensor._make(data, (self,), backward, "reshape")

    def swapaxes(self, a: int, b: int):
        data = np.swapaxes(self.data, a, b)

        def backward(grad):
            return (np.swapaxes(grad, a, b),)

        return Tensor._make(data, (self,), backward, "swapaxes")

    # -- gating -----------------------------------------------------------------

    def maximum(self, other):
        other = as_tensor(other)
        data = np.maximum(self.data, other.data)

        def backward(grad):
            take_self = self.data >= other.data
            return (_unbroadcast(grad * take_self, self.shape),
                    _unbroadcast(grad * ~take_self, other.shape))

        return Tensor._make(data, (self, other), backward, "maximum")

    def minimum(self, other):
        other = as_tensor(other)
        data = np.minimum(self.data, other.data)

        def backward(grad):
            take_self = self.data <= other.data
            return (_unbroadcast(grad * take_self, self.shape),
                    _unbroadcast(grad * ~take_self, other.shape))

        return Tensor._make(data, (self, other), backward, "minimum")

    def clip(self, lo: float, hi: float):
        data = np.clip(self.data, lo, hi)

        def backward(grad):
            return (grad * ((self.data >= lo) & (self.data <= hi)),)

        return Tensor._make(data, (self,), backward, "clip")

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- backprop --------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ShapeMismatch("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is None or node.grad is None:
                continue
            grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None:
                    continue
                g = np.asarray(g, dtype=np.float64)
                if parent.grad is None:
                    parent.grad = g.reshape(parent.shape).copy()
                else:
                    parent.grad = parent.grad + g.reshape(parent.shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def backward(grad):
        return tuple(np.split(grad, splits, axis=axis))

    return Tensor._make(data, tuple(tensors), backward, "concat")


def masked_softmax(scores: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over the unmasked entries of each slice along `axis`.

    Masked entries are exactly zero in the output; every slice must have at
    least one unmasked entry. The max-shift is detached, which leaves the
    softmax value and gradient unchanged.
    """
    shift = np.max(scores.data, axis=axis, keepdims=True)
    e = (scores - Tensor(shift)).exp() * mask
    total = e.sum(axis=axis, keepdims=True)
    return e / total


def backward_with_report(loss: Tensor, params: dict[str, Tensor]) -> list[str]:
    """Run backward and zero-fill gradients of parameters the loss never touched.

    Returns the names of those disconnected parameters.
    """
    loss.backward()
    disconnected = []
    for name, p in params.items():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
            disconnected.append(name)
    return disconnected
