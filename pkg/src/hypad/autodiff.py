"""Dense fp64 tensors with reverse-mode automatic differentiation.

The tape is implicit: every operation on a :class:`Tensor` that requires a
gradient returns a new node holding references to its parents and a closure
mapping the output gradient to parent gradients.  :func:`backward` sorts the
graph reachable from a scalar loss and replays the closures in reverse.

Every operation also accepts plain arrays.  When none of the operands is a
``Tensor`` the numpy result is returned directly, so the same formula can be
evaluated numerically or on the tape (the geometry kernel relies on this).
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

from . import _kernels
from .errors import ContractError, InvalidValueError, ShapeError

# derivative of acosh is evaluated no closer to 1 than this
ACOSH_GRAD_FLOOR = 1.0 + 1e-7

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, critic targets)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float64 array that can take part in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _any_tensor(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def _node(data, parents, backward_fn, op) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out.op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


def _check_finite(x, op):
    if not np.all(np.isfinite(x)):
        raise InvalidValueError(f"{op}: non-finite input")


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    if not _any_tensor(a, b):
        return np.add(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    if not _any_tensor(a, b):
        return np.subtract(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    if not _any_tensor(a, b):
        return np.multiply(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def div(a, b):
    if not _any_tensor(a, b):
        return np.divide(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
                 "div")


def neg(a):
    if not isinstance(a, Tensor):
        return np.negative(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b):
    if not _any_tensor(a, b):
        return np.matmul(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _node(a.data @ b.data, (a, b), bw, "matmul")


# ---------------------------------------------------------------- structure


def concat(xs, axis=0):
    if not _any_tensor(*xs):
        return np.concatenate(xs, axis=axis)
    xs = [_as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(xs), bw, "concat")


def getitem(x, idx):
    if not isinstance(x, Tensor):
        return np.asarray(x)[idx]
    out = x.data[idx]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(np.array(out), (x,), bw, "slice")


def slice_axis(x, start, stop, axis=-1, step=1):
    """``x[..., start:stop:step, ...]`` along one axis."""
    nd = x.ndim if isinstance(x, Tensor) else np.ndim(x)
    idx = [slice(None)] * nd
    idx[axis] = slice(start, stop, step)
    idx = tuple(idx)
    if not isinstance(x, Tensor):
        return np.asarray(x)[idx]

    def bw(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _node(np.ascontiguousarray(x.data[idx]), (x,), bw, "slice")


def transpose(x, axes=None):
    if not isinstance(x, Tensor):
        return np.transpose(x, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _node(np.ascontiguousarray(np.transpose(x.data, axes)), (x,),
                 lambda g: (np.transpose(g, inv),), "transpose")


def reshape(x, shape):
    if not isinstance(x, Tensor):
        return np.reshape(x, shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


# ---------------------------------------------------------------- reductions


def sum(x, axis=None, keepdims=False):  # noqa: A001
    if not isinstance(x, Tensor):
        return np.sum(x, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return np.mean(x, axis=axis, keepdims=keepdims)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def norm2(x, axis=-1, keepdims=True):
    """Euclidean norm along ``axis``; the gradient at a zero vector is zero."""
    if not isinstance(x, Tensor):
        return np.sqrt(np.sum(np.square(x), axis=axis, keepdims=keepdims))
    n = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(n > 0.0, n, 1.0)
        return (np.where(n > 0.0, g * x.data / safe, 0.0),)

    out = n if keepdims else np.squeeze(n, axis=axis)
    return _node(out, (x,), bw, "norm2")


# ---------------------------------------------------------------- elementwise


def _unary(x, fwd, dfdx, op):
    out = fwd(x.data)
    return _node(out, (x,), lambda g: (g * dfdx(x.data, out),), op)


def abs(x):  # noqa: A001
    if not isinstance(x, Tensor):
        return np.abs(x)
    return _unary(x, np.abs, lambda v, o: np.sign(v), "abs")


def square(x):
    if not isinstance(x, Tensor):
        return np.square(x)
    return _unary(x, np.square, lambda v, o: 2.0 * v, "square")


def sqrt(x):
    if not isinstance(x, Tensor):
        return np.sqrt(x)
    if np.any(x.data < 0):
        raise InvalidValueError("sqrt of a negative value")
    return _unary(x, np.sqrt, lambda v, o: 0.5 / o, "sqrt")


def exp(x):
    if not isinstance(x, Tensor):
        return np.exp(x)
    return _unary(x, np.exp, lambda v, o: o, "exp")


def log(x):
    if not isinstance(x, Tensor):
        return np.log(x)
    if np.any(x.data <= 0):
        raise InvalidValueError("log of a non-positive value")
    return _unary(x, np.log, lambda v, o: 1.0 / v, "log")


def tanh(x):
    if not isinstance(x, Tensor):
        return np.tanh(x)
    return _unary(x, np.tanh, lambda v, o: 1.0 - o * o, "tanh")


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x):
    if not isinstance(x, Tensor):
        return _sigmoid(np.asarray(x, dtype=np.float64))
    return _unary(x, _sigmoid, lambda v, o: o * (1.0 - o), "sigmoid")


def relu(x):
    if not isinstance(x, Tensor):
        return np.maximum(x, 0.0)
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda v, o: (v > 0).astype(np.float64), "relu")


def leaky_relu(x, slope=0.2):
    if not isinstance(x, Tensor):
        return np.where(np.asarray(x) > 0, x, slope * np.asarray(x))
    return _unary(x, lambda v: np.where(v > 0, v, slope * v),
                  lambda v, o: np.where(v > 0, 1.0, slope), "leaky_relu")


def artanh(x):
    """Inverse hyperbolic tangent; inputs must lie strictly inside (-1, 1)."""
    v = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if np.any(~(np.abs(v) < 1.0)):
        raise InvalidValueError("artanh input outside (-1, 1)")
    if not isinstance(x, Tensor):
        return np.arctanh(v)
    return _unary(x, np.arctanh, lambda v, o: 1.0 / (1.0 - v * v), "artanh")


def acosh_stable(x, grad_floor=ACOSH_GRAD_FLOOR):
    """``acosh(max(x, 1))``; the derivative is taken no closer to 1 than ``grad_floor``."""
    if not isinstance(x, Tensor):
        return np.arccosh(np.maximum(x, 1.0))

    def d(v, o):
        w = np.maximum(v, grad_floor)
        return 1.0 / np.sqrt(w * w - 1.0)

    return _unary(x, lambda v: np.arccosh(np.maximum(v, 1.0)), d, "acosh")


def clip_max(x, hi):
    """``min(x, hi)`` for a constant ``hi``; gradient passes only where x < hi."""
    if not isinstance(x, Tensor):
        return np.minimum(x, hi)
    return _unary(x, lambda v: np.minimum(v, hi), lambda v, o: (v < hi).astype(np.float64), "clip_max")


def clip_min(x, lo):
    if not isinstance(x, Tensor):
        return np.maximum(x, lo)
    return _unary(x, lambda v: np.maximum(v, lo), lambda v, o: (v > lo).astype(np.float64), "clip_min")


# ---------------------------------------------------------------- fused LSTM


def lstm_recurrence(xproj, U):
    """LSTM recurrence over a projected sequence ``xproj`` of shape (T, B, 4H).

    Returns the hidden states, shape (T, B, H).  Forward and backward run in
    the compiled kernel when available.
    """
    xproj, U = _as_tensor(xproj), _as_tensor(U)
    T, B, G = xproj.shape
    if U.shape != (G // 4, G) or G % 4:
        raise ShapeError(f"recurrent weight {U.shape} does not match projection width {G}")
    xp = np.ascontiguousarray(xproj.data)
    Ud = np.ascontiguousarray(U.data)
    hs, cs, gates = _kernels.lstm_forward(xp, Ud)

    def bw(g):
        dz, dU = _kernels.lstm_backward(np.ascontiguousarray(g), Ud, hs, cs, gates)
        return dz, dU

    return _node(hs, (xproj, U), bw, "lstm")


# ---------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward needs a scalar loss, got shape {shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not on the tape (no input requires grad)")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def grad_check(f, point, step=1e-5) -> float:
    """Compare autodiff against central differences for a scalar function.

    ``f`` maps a Tensor to a scalar Tensor.  Returns the largest
    ``|autodiff - fd| / (|fd| + 1e-8)`` over the coordinates of ``point``.
    """
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    loss = f(x)
    backward(loss)
    analytic = x.grad if x.grad is not None else np.zeros_like(x0)
    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    out = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            fp = float(f(Tensor(x0)).data)
            flat[i] = keep - step
            fm = float(f(Tensor(x0)).data)
            flat[i] = keep
            out[i] = (fp - fm) / (2.0 * step)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))
