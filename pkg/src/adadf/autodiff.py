"""Reverse-mode automatic differentiation over dense numpy arrays.

Operations on `Tensor` objects are recorded on the active `Tape` when at
least one input requires a gradient.  Outside of a ``with Tape():`` block
nothing is recorded, which is how evaluation and finite differences run.
`backward` replays the tape of a scalar loss in reverse and accumulates
gradients into every reachable tensor that requires one.

Each thread has its own stack of active tapes, so distinct models may be
trained on distinct threads.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from adadf.constants import LOG_EPSILON, SIGMOID_CLAMP
from adadf.exceptions import ContractError, DimensionError

if TYPE_CHECKING:
    from types import TracebackType
    from typing import (
        Any,
        Callable,
        Dict,
        Iterator,
        List,
        Optional,
        Sequence,
        Tuple,
        Type,
        Union,
    )

    Operand = Union["Tensor", float, int, np.ndarray]
    BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

__all__ = [
    "Node",
    "Tape",
    "Tensor",
    "add",
    "backward",
    "detach",
    "div",
    "grad_check",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "pick",
    "relu",
    "reshape",
    "sigmoid",
    "softmax_rows",
    "sub",
    "take",
    "tensor_sum",
]

_local = threading.local()


def _active_tape() -> Optional[Tape]:
    tapes = getattr(_local, "tapes", None)
    return tapes[-1] if tapes else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording on the current thread, even inside a tape."""
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    _local.tapes.append(None)
    try:
        yield
    finally:
        _local.tapes.pop()


class Tensor:
    """A dense real array that can take part in a computation graph.

    Parameters
    ----------
    data : array-like
        The values.  Integer input is converted to float64.
    requires_grad : `bool`, optional
        Whether gradients should be accumulated into `grad`.
    dtype : `str`, optional
        Force a numpy dtype, such as ``float32``.
    """

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: Optional[str] = None,
    ) -> None:
        array = np.array(data, dtype=dtype, copy=True)
        if array.dtype.kind != "f":
            array = array.astype(np.float64)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> Tensor:
        """Wrap an array produced by an operation without copying it."""
        tensor = cls.__new__(cls)
        tensor.data = data
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor._tape = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        """Return the value of a single-element tensor."""
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Return a copy of the values."""
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return (
            f"Tensor(shape={self.shape}, dtype={self.dtype},"
            f" requires_grad={self.requires_grad})"
        )

    def __add__(self, other: Operand) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Operand) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Operand) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Operand) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Operand) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Operand) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Operand) -> Tensor:
        return div(self, other)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def sum(self, axis: Optional[int] = None) -> Tensor:
        return tensor_sum(self, axis)

    def mean(self, axis: Optional[int] = None) -> Tensor:
        return mean(self, axis)


@dataclass
class Node:
    """One recorded primitive operation."""

    name: str
    """Name of the primitive, for debugging."""

    inputs: Tuple[Tensor, ...]
    """The operands."""

    output: Tensor
    """The result."""

    backward: BackwardFn
    """Maps the output gradient to one gradient (or `None`) per input."""


class Tape:
    """Ordered record of the operations of one forward pass.

    Use as a context manager to make the tape active on the current thread.
    Parameters are leaves and are never recorded, so they persist across
    passes when the tape is cleared.
    """

    def __init__(self) -> None:
        self.nodes: List[Node] = []

    def __enter__(self) -> Tape:
        if not hasattr(_local, "tapes"):
            _local.tapes = []
        _local.tapes.append(self)
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc: Optional[BaseException],
        tb: Optional[TracebackType],
    ) -> None:
        _local.tapes.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        """Free every recorded node."""
        for node in self.nodes:
            node.output._tape = None
        self.nodes = []


def _as_tensor(value: Operand, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor._wrap(np.asarray(value, dtype=dtype), False)


def _record(
    name: str,
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: BackwardFn,
) -> Tensor:
    tape = _active_tape()
    requires_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(np.asarray(data), requires_grad)
    if tape is not None and requires_grad:
        out._tape = tape
        tape.record(Node(name, tuple(inputs), out, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand shape."""
    if grad.shape == shape:
        return grad
    for _ in range(grad.ndim - len(shape)):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(name, a.shape, b.shape)


def add(a: Operand, b: Operand) -> Tensor:
    """Elementwise sum with broadcasting."""
    x = _as_tensor(a, b if isinstance(b, Tensor) else None)
    y = _as_tensor(b, x)
    _check_broadcast("add", x, y)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return _record("add", x.data + y.data, (x, y), backward_fn)


def sub(a: Operand, b: Operand) -> Tensor:
    """Elementwise difference with broadcasting."""
    x = _as_tensor(a, b if isinstance(b, Tensor) else None)
    y = _as_tensor(b, x)
    _check_broadcast("sub", x, y)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)

    return _record("sub", x.data - y.data, (x, y), backward_fn)


def mul(a: Operand, b: Operand) -> Tensor:
    """Elementwise product with broadcasting.

    Multiplying an n×d tensor by an n×1 tensor scales each row, which is how
    branch features are weighted by their attention scalars.
    """
    x = _as_tensor(a, b if isinstance(b, Tensor) else None)
    y = _as_tensor(b, x)
    _check_broadcast("mul", x, y)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return (
            _unbroadcast(g * y.data, x.shape),
            _unbroadcast(g * x.data, y.shape),
        )

    return _record("mul", x.data * y.data, (x, y), backward_fn)


def div(a: Operand, b: Operand) -> Tensor:
    """Elementwise quotient with broadcasting."""
    x = _as_tensor(a, b if isinstance(b, Tensor) else None)
    y = _as_tensor(b, x)
    _check_broadcast("div", x, y)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return (
            _unbroadcast(g / y.data, x.shape),
            _unbroadcast(-g * x.data / (y.data * y.data), y.shape),
        )

    return _record("div", x.data / y.data, (x, y), backward_fn)


def neg(a: Tensor) -> Tensor:
    """Elementwise negation."""

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (-g,)

    return _record("neg", -a.data, (a,), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an m×k and a k×n tensor.

    Raises
    ------
    adadf.exceptions.DimensionError
        The operands are not matrices or the inner dimensions disagree.
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", a.data @ b.data, (a, b), backward_fn)


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``.  The subgradient at zero is zero."""
    mask = x.data > 0

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * mask,)

    out = np.where(mask, x.data, 0.0).astype(x.dtype)
    return _record("relu", out, (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    """Elementwise logistic function, strictly inside (0, 1).

    Outputs are kept at least one machine epsilon of the tensor's dtype
    away from 0 and 1, which only affects single precision.
    """
    clamped = np.clip(x.data, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    e = np.exp(-np.abs(clamped))
    s = np.where(clamped >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    eps = np.finfo(x.dtype).eps
    s = np.clip(s, eps, 1.0 - eps).astype(x.dtype)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * s * (1.0 - s),)

    return _record("sigmoid", s, (x,), backward_fn)


def softmax_rows(x: Tensor) -> Tensor:
    """Numerically stable softmax over the rows of an n×C tensor.

    Raises
    ------
    adadf.exceptions.ContractError
        The input is not a matrix with at least two columns.
    """
    if x.data.ndim != 2 or x.shape[1] < 2:
        raise ContractError(
            f"softmax_rows needs an n×C matrix with C ≥ 2, got {x.shape}"
        )
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        inner = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - inner),)

    return _record("softmax_rows", s, (x,), backward_fn)


def log(x: Tensor, eps: float = LOG_EPSILON) -> Tensor:
    """Elementwise natural logarithm of ``max(x, eps)``."""
    clamped = np.maximum(x.data, eps)
    active = x.data > eps

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (np.where(active, g / clamped, 0.0),)

    return _record("log", np.log(clamped), (x,), backward_fn)


def tensor_sum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    """Sum over all elements or along one axis."""

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    out = np.asarray(x.data.sum(axis=axis))
    return _record("sum", out, (x,), backward_fn)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    """Mean over all elements or along one axis."""
    count = x.size if axis is None else x.shape[axis]
    return div(tensor_sum(x, axis), float(count))


def take(x: Tensor, indices: np.ndarray) -> Tensor:
    """Select elements of a vector (or rows of a matrix) by index."""
    index = np.asarray(indices, dtype=np.int64)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros_like(x.data)
        np.add.at(grad, index, g)
        return (grad,)

    return _record("take", x.data[index], (x,), backward_fn)


def pick(x: Tensor, columns: np.ndarray) -> Tensor:
    """Select one column per row of an n×C tensor, giving a vector."""
    rows = np.arange(x.shape[0])
    cols = np.asarray(columns, dtype=np.int64)
    if x.data.ndim != 2 or cols.shape != (x.shape[0],):
        raise DimensionError("pick", x.shape, cols.shape)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros_like(x.data)
        grad[rows, cols] = g
        return (grad,)

    return _record("pick", x.data[rows, cols], (x,), backward_fn)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """View the values of ``x`` with a new shape of the same size."""
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError("reshape", x.shape, shape)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g.reshape(x.shape),)

    return _record("reshape", out, (x,), backward_fn)


def detach(x: Tensor) -> Tensor:
    """Return a copy of ``x`` that no gradient flows through."""
    return Tensor(x.data, requires_grad=False)


def backward(loss: Tensor) -> None:
    """Accumulate the gradients of a scalar loss.

    Gradients are added to the ``grad`` of every tensor requiring one that
    the loss depends on, so repeated calls accumulate.  A loss that depends
    on nothing requiring a gradient leaves every gradient untouched.

    Raises
    ------
    adadf.exceptions.ContractError
        The loss has more than one element.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got {loss.shape}")
    tape = loss._tape
    if tape is None or not loss.requires_grad:
        return

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tensors: Dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None:
            continue
        for tensor, input_grad in zip(node.inputs, node.backward(g)):
            if input_grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + input_grad
            else:
                grads[key] = input_grad
                tensors[key] = tensor

    for key, grad in grads.items():
        tensor = tensors[key]
        grad = np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape)
        if tensor.grad is None:
            tensor.grad = grad.copy()
        else:
            tensor.grad = tensor.grad + grad


def grad_check(
    f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5
) -> float:
    """Compare the analytic gradient of ``f`` at ``x`` to finite differences.

    Parameters
    ----------
    f : Callable[[`Tensor`], `Tensor`]
        A scalar function of ``x``.  It is evaluated once on a tape and then
        twice per element of ``x`` without one.
    x : `Tensor`
        The point, which must require a gradient.  Its values are perturbed
        in place and restored.
    h : `float`, optional
        Central difference step.

    Returns
    -------
    error : `float`
        Maximum over elements of ``|a - n| / max(|a|, |n|, 1e-8)`` where
        ``a`` is the analytic and ``n`` the numeric derivative.
    """
    if h <= 0:
        raise ContractError("grad_check step must be positive")
    saved_grad = x.grad
    x.grad = None
    with Tape() as tape:
        loss = f(x)
    backward(loss)
    tape.clear()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad
    x.grad = saved_grad

    error = 0.0
    for index in np.ndindex(*x.shape):
        original = x.data[index]
        x.data[index] = original + h
        f_plus = f(x).item()
        x.data[index] = original - h
        f_minus = f(x).item()
        x.data[index] = original
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = float(analytic[index])
        scale = max(abs(a), abs(numeric), 1e-8)
        error = max(error, abs(a - numeric) / scale)
    return error
