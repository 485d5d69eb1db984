"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation builds a dynamic tape: the output tensor records its parents
and a closure that maps the output gradient to parent gradients.  Calling
``backward`` on a scalar walks the tape in reverse topological order and
accumulates gradients additively into every ``requires_grad`` tensor it
reaches.  Accumulation is deliberate: two backward passes over the same graph
double the gradients, so callers zero grads between optimizer steps.

All values are 64-bit floats in row-major order.  Broadcasting follows the
conventional trailing-dimension alignment.  Any op that produces a NaN or Inf
raises :class:`NumericsError` immediately, naming the op; silent propagation
would poison every downstream result.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeMismatchError",
    "DomainError",
    "NumericsError",
    "OPS",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "exp",
    "log",
    "sin",
    "cos",
    "sqrt",
    "sigmoid",
    "relu",
    "clip",
    "softmax",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "reshape",
    "transpose",
    "backward",
    "grad_check",
]


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of the op."""


class NumericsError(ArithmeticError):
    """An op produced NaN or Inf."""


# Names of the differentiable ops this module registers; the test suite
# sweeps this list with grad_check so new ops cannot dodge verification.
OPS = (
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "exp",
    "log",
    "sin",
    "cos",
    "sqrt",
    "sigmoid",
    "relu",
    "clip",
    "softmax",
    "sum",
    "mean",
    "max",
    "reshape",
    "transpose",
    "getitem",
)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values produced by op '{op}'")


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    ``data`` is immutable by convention once the tensor participates in a
    graph; only the optimizer rewrites parameter data between steps, and only
    ``backward`` touches ``grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_op", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._op: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._bwd: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- construction of op outputs ------------------------------------

    @staticmethod
    def _from_op(
        data: np.ndarray,
        op: str,
        parents: tuple["Tensor", ...],
        bwd: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    ) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = np.ascontiguousarray(data, dtype=np.float64)
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        if out.requires_grad:
            out._op = op
            out._parents = parents
            out._bwd = bwd
        else:
            out._op = None
            out._parents = ()
            out._bwd = None
        return out

    # -- basic properties ----------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators -----------------------------------------------------

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

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims: bool = False):
        return reduce_max(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def backward(self) -> None:
        backward(self)


def _ensure_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- linear algebra ----------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product of ``a [.., M, K]`` and ``b [.., K, N]``."""
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        with np.errstate(over="ignore"):
            out = np.matmul(a.data, b.data)
    except ValueError as err:
        raise ShapeMismatchError(
            f"matmul: incompatible shapes {a.shape} and {b.shape}"
        ) from err

    def bwd(g: np.ndarray):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return Tensor._from_op(out, "matmul", (a, b), bwd)


# -- elementwise -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    out = a.data + b.data
    return Tensor._from_op(
        out, "add", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    out = a.data - b.data
    return Tensor._from_op(
        out, "sub", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    out = a.data * b.data
    return Tensor._from_op(
        out, "mul", (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    if np.any(b.data == 0.0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def bwd(g: np.ndarray):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor._from_op(out, "div", (a, b), bwd)


def neg(x) -> Tensor:
    x = _ensure_tensor(x)
    return Tensor._from_op(-x.data, "neg", (x,), lambda g: (-g,))


def scale(x, factor: float) -> Tensor:
    """Multiply by a python scalar constant."""
    x = _ensure_tensor(x)
    c = float(factor)
    return Tensor._from_op(x.data * c, "scale", (x,), lambda g: (g * c,))


def exp(x) -> Tensor:
    x = _ensure_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return Tensor._from_op(out, "exp", (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = _ensure_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log: input must be strictly positive")
    out = np.log(x.data)
    return Tensor._from_op(out, "log", (x,), lambda g: (g / x.data,))


def sin(x) -> Tensor:
    x = _ensure_tensor(x)
    return Tensor._from_op(np.sin(x.data), "sin", (x,), lambda g: (g * np.cos(x.data),))


def cos(x) -> Tensor:
    x = _ensure_tensor(x)
    return Tensor._from_op(np.cos(x.data), "cos", (x,), lambda g: (-g * np.sin(x.data),))


def sqrt(x) -> Tensor:
    x = _ensure_tensor(x)
    if np.any(x.data < 0.0):
        raise DomainError("sqrt: input must be non-negative")
    out = np.sqrt(x.data)

    def bwd(g: np.ndarray):
        return (g / (2.0 * out),)

    return Tensor._from_op(out, "sqrt", (x,), bwd)


def sigmoid(x) -> Tensor:
    """Numerically stable logistic function; output lies in [0, 1]."""
    x = _ensure_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._from_op(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def relu(x) -> Tensor:
    x = _ensure_tensor(x)
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient is 1 inside the interval, 0 outside."""
    x = _ensure_tensor(x)
    out = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)
    return Tensor._from_op(out, "clip", (x,), lambda g: (g * mask,))


# -- softmax and reductions --------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, computed with max-subtraction for stability."""
    x = _ensure_tensor(x)
    axis = _norm_axis(axis, x.ndim, "softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g: np.ndarray):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return Tensor._from_op(out, "softmax", (x,), bwd)


def _norm_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeMismatchError(f"{op}: axis {axis} out of range for ndim {ndim}")
    return axis % ndim


def _check_nonempty(x: Tensor, axis, op: str) -> None:
    if axis is None:
        if x.size == 0:
            raise DomainError(f"{op}: reduction over empty tensor")
    elif x.shape[axis] == 0:
        raise DomainError(f"{op}: reduction over empty axis {axis}")


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduced gradient back to the pre-reduction shape."""
    if not keepdims:
        g = g.reshape((1,) * len(shape)) if axis is None else np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _ensure_tensor(x)
    if axis is not None:
        axis = _norm_axis(axis, x.ndim, "sum")
    _check_nonempty(x, axis, "sum")
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g: np.ndarray):
        return (np.ascontiguousarray(_expand_reduced(g, x.shape, axis, keepdims)),)

    return Tensor._from_op(np.asarray(out), "sum", (x,), bwd)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _ensure_tensor(x)
    if axis is not None:
        axis = _norm_axis(axis, x.ndim, "mean")
    _check_nonempty(x, axis, "mean")
    n = x.size if axis is None else x.shape[axis]
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g: np.ndarray):
        return (np.ascontiguousarray(_expand_reduced(g, x.shape, axis, keepdims)) / n,)

    return Tensor._from_op(np.asarray(out), "mean", (x,), bwd)


def reduce_max(x, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; ties share the incoming gradient equally."""
    x = _ensure_tensor(x)
    if axis is not None:
        axis = _norm_axis(axis, x.ndim, "max")
    _check_nonempty(x, axis, "max")
    out = x.data.max(axis=axis, keepdims=keepdims)
    full = x.data.max(axis=axis, keepdims=True) if axis is not None else np.asarray(out).reshape((1,) * x.ndim)

    def bwd(g: np.ndarray):
        mask = x.data == full
        count = mask.sum(axis=axis, keepdims=True) if axis is not None else mask.sum()
        return (mask * _expand_reduced(g, x.shape, axis, keepdims) / count,)

    return Tensor._from_op(np.asarray(out), "max", (x,), bwd)


# -- shape ops ---------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = _ensure_tensor(x)
    out = x.data.reshape(shape)
    return Tensor._from_op(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = _ensure_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))
    out = x.data.transpose(axes)
    return Tensor._from_op(out, "transpose", (x,), lambda g: (g.transpose(inverse),))


def getitem(x, key) -> Tensor:
    """Basic (slice/int) indexing; gradient scatters back into place."""
    x = _ensure_tensor(x)
    out = x.data[key]

    def bwd(g: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return Tensor._from_op(np.asarray(out), "getitem", (x,), bwd)


# -- backward pass -----------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every requires_grad tensor.

    ``loss`` must be scalar.  Gradients add onto whatever is already stored,
    so a second backward over the same graph doubles them; callers reset
    ``grad`` to ``None`` between steps.
    """
    if loss.data.size != 1:
        raise ShapeMismatchError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    order = _topo_order(loss)
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._bwd is None:
            continue
        parent_grads = node._bwd(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            _check_finite(pg, f"backward[{node._op}]")
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


# -- gradient checking -------------------------------------------------


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be scalar-valued and deterministic.  The relative error per
    element is ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    if epsilon <= 0:
        raise DomainError("grad_check: epsilon must be positive")
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ShapeMismatchError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)

    numeric = np.empty_like(x.data)
    base = x.data
    for idx in np.ndindex(base.shape):
        shifted = base.copy()
        shifted[idx] = base[idx] + epsilon
        f_plus = float(f(Tensor(shifted)).data.reshape(()))
        shifted[idx] = base[idx] - epsilon
        f_minus = float(f(Tensor(shifted)).data.reshape(()))
        numeric[idx] = (f_plus - f_minus) / (2.0 * epsilon)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    return float(rel.max()) if rel.size else 0.0
