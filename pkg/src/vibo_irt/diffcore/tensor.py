"""Tape-based reverse-mode automatic differentiation over numpy arrays.

All values are float64 ndarrays. A Tensor wraps an array; an operation
records its inputs and a backward closure only when some input requires
gradients, so the same functions run essentially tape-free at inference
time. Gradients are accumulated into ``.grad`` by :func:`run_backward`,
which walks the graph once in reverse topological order.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _special

_LOG_HALF = float(np.log(0.5))


class DimensionError(ValueError):
    """Operand shapes cannot be composed."""


class NumericalError(FloatingPointError):
    """A non-finite value appeared where finite math was required."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    # make `ndarray <op> Tensor` dispatch to the reflected Tensor operator
    # instead of numpy broadcasting over a python object
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # arithmetic operators
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

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def run_backward(root: Tensor) -> None:
    """Seed d(root)/d(root)=1 and accumulate grads through the graph.

    The root must be scalar-shaped. Leaves keep whatever was already in
    ``.grad`` (accumulation), interior nodes are fresh per graph.
    """
    if root.data.size != 1:
        raise DimensionError(f"backward root must be scalar, got shape {root.data.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and (p._backward is not None or p.requires_grad):
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = _node(a.data + b.data, (a, b), None)

    def backward():
        g = out.grad
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = _node(a.data - b.data, (a, b), None)

    def backward():
        g = out.grad
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = _node(a.data * b.data, (a, b), None)

    def backward():
        g = out.grad
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = _node(a.data / b.data, (a, b), None)

    def backward():
        g = out.grad
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def neg(a) -> Tensor:
    a = _lift(a)
    out = _node(-a.data, (a,), None)

    def backward():
        _accum(a, -out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def pow_const(a, p) -> Tensor:
    a = _lift(a)
    p = float(p)
    out = _node(a.data ** p, (a,), None)

    def backward():
        _accum(a, out.grad * p * a.data ** (p - 1.0))

    out._backward = backward if out.requires_grad else None
    return out


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = _node(a.data @ b.data, (a, b), None)

    def backward():
        g = out.grad
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    out._backward = backward if out.requires_grad else None
    return out


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), None)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            ax = axis if isinstance(axis, tuple) else (axis,)
            ax = tuple(i % a.data.ndim for i in ax)
            shape = tuple(1 if i in ax else s for i, s in enumerate(a.data.shape))
            g = g.reshape(shape)
        _accum(a, np.broadcast_to(g, a.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    if axis is None:
        n = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[i] for i in ax]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def texp(a) -> Tensor:
    a = _lift(a)
    out = _node(np.exp(a.data), (a,), None)

    def backward():
        _accum(a, out.grad * out.data)

    out._backward = backward if out.requires_grad else None
    return out


def _masked_chain(g: np.ndarray, local: np.ndarray) -> np.ndarray:
    """g * local, except cells select() zeroed out stay zero.

    Ops whose local derivative blows up exactly where select masked the
    value away (log at 0, log1mexp at 0, sqrt at 0) would otherwise turn
    the masked zero gradient into 0 * inf = nan.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        out = g * local
    return np.where(np.asarray(g) == 0.0, 0.0, out)


def tlog(a) -> Tensor:
    a = _lift(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _node(np.log(a.data), (a,), None)

    def backward():
        _accum(a, _masked_chain(out.grad, 1.0 / a.data))

    out._backward = backward if out.requires_grad else None
    return out


def sqrt(a) -> Tensor:
    a = _lift(a)
    out = _node(np.sqrt(a.data), (a,), None)

    def backward():
        _accum(a, _masked_chain(out.grad, 0.5 / out.data))

    out._backward = backward if out.requires_grad else None
    return out


def tanh(a) -> Tensor:
    a = _lift(a)
    out = _node(np.tanh(a.data), (a,), None)

    def backward():
        _accum(a, out.grad * (1.0 - out.data * out.data))

    out._backward = backward if out.requires_grad else None
    return out


def sigmoid(a) -> Tensor:
    a = _lift(a)
    out = _node(_special.expit(a.data), (a,), None)

    def backward():
        _accum(a, out.grad * out.data * (1.0 - out.data))

    out._backward = backward if out.requires_grad else None
    return out


def softplus(a) -> Tensor:
    a = _lift(a)
    out = _node(np.logaddexp(0.0, a.data), (a,), None)

    def backward():
        _accum(a, out.grad * _special.expit(a.data))

    out._backward = backward if out.requires_grad else None
    return out


def logsigmoid(a) -> Tensor:
    """log sigmoid(x) = -softplus(-x), stable on both tails."""
    return neg(softplus(neg(a)))


def elu(a) -> Tensor:
    """ELU with alpha=1: x for x>0, expm1(x) otherwise. C1 at zero."""
    a = _lift(a)
    pos = a.data > 0.0
    out = _node(np.where(pos, a.data, np.expm1(a.data)), (a,), None)

    def backward():
        # for x<=0 the local slope is exp(x) = value+1
        _accum(a, out.grad * np.where(pos, 1.0, out.data + 1.0))

    out._backward = backward if out.requires_grad else None
    return out


def erf(a) -> Tensor:
    a = _lift(a)
    out = _node(_special.erf(a.data), (a,), None)
    coef = 2.0 / np.sqrt(np.pi)

    def backward():
        _accum(a, out.grad * coef * np.exp(-a.data * a.data))

    out._backward = backward if out.requires_grad else None
    return out


def log1mexp(a) -> Tensor:
    """log(1 - exp(x)) for x <= 0, switching forms at log(1/2) for accuracy.

    x == 0 yields -inf rather than raising; callers decide whether a
    non-finite log-likelihood is an error.
    """
    a = _lift(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = a.data
        out_data = np.where(x < _LOG_HALF, np.log1p(-np.exp(x)), np.log(-np.expm1(x)))
    out = _node(out_data, (a,), None)

    def backward():
        with np.errstate(all="ignore"):  # expm1 overflow gives -1/huge -> 0
            _accum(a, _masked_chain(out.grad, -1.0 / np.expm1(-a.data)))

    out._backward = backward if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    out = _node(a.data.reshape(shape), (a,), None)

    def backward():
        _accum(a, out.grad.reshape(a.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def transpose(a, axes=None) -> Tensor:
    a = _lift(a)
    out = _node(np.transpose(a.data, axes), (a,), None)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def backward():
        _accum(a, np.transpose(out.grad, inv))

    out._backward = backward if out.requires_grad else None
    return out


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_lift(p) for p in parts]
    out = _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), None)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = out.grad
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(lo), int(hi))
            _accum(p, g[tuple(idx)])

    out._backward = backward if out.requires_grad else None
    return out


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = _lift(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _node(a.data[idx], (a,), None)

    def backward():
        buf = np.zeros_like(a.data)
        buf[idx] = out.grad
        _accum(a, buf)

    out._backward = backward if out.requires_grad else None
    return out


def take_rows(a, index) -> Tensor:
    a = _lift(a)
    index = np.asarray(index, dtype=np.intp)
    out = _node(a.data[index], (a, ), None)

    def backward():
        buf = np.zeros_like(a.data)
        np.add.at(buf, index, out.grad)
        _accum(a, buf)

    out._backward = backward if out.requires_grad else None
    return out


def repeat_rows(a, n: int) -> Tensor:
    """Repeat each row n times: (R, C) -> (R*n, C), row-major blocks."""
    a = _lift(a)
    out = _node(np.repeat(a.data, n, axis=0), (a,), None)

    def backward():
        r, c = a.data.shape
        _accum(a, out.grad.reshape(r, n, c).sum(axis=1))

    out._backward = backward if out.requires_grad else None
    return out


def tile_rows(a, n: int) -> Tensor:
    """Stack the whole matrix n times: (R, C) -> (n*R, C)."""
    a = _lift(a)
    out = _node(np.tile(a.data, (n, 1)), (a,), None)

    def backward():
        r, c = a.data.shape
        _accum(a, out.grad.reshape(n, r, c).sum(axis=0))

    out._backward = backward if out.requires_grad else None
    return out


def select(mask, a, b) -> Tensor:
    """Elementwise mask ? a : b with a constant boolean mask.

    Unlike the arithmetic blend mask*a + (1-mask)*b this never multiplies
    0 * inf, so an infinite value on the unselected branch stays inert in
    both the forward and backward passes.
    """
    mask = np.asarray(mask, dtype=bool)
    a, b = _lift(a), _lift(b)
    out = _node(np.where(mask, a.data, b.data), (a, b), None)

    def backward():
        g = out.grad
        _accum(a, _unbroadcast(np.where(mask, g, 0.0), a.data.shape))
        _accum(b, _unbroadcast(np.where(mask, 0.0, g), b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out
