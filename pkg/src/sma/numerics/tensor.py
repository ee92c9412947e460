"""Dense tensors with a recording tape for reverse-mode differentiation.

Every differentiable kernel is a pair of numpy functions ``fwd(*arrays, **kw)
-> (out, ctx)`` and ``bwd(grad_out, ctx, *arrays, **kw) -> input grads``.
When a :class:`Tape` is active and some input is tracked, the call is
appended to the tape; :func:`backward` walks the tape in reverse.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

_DTYPE = np.float64
_TAPES: list["Tape"] = []


def default_dtype() -> np.dtype:
    return np.dtype(_DTYPE)


def set_default_dtype(dtype) -> None:
    """Switch between float64 (verification) and float32 (speed) mode."""
    global _DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dt}")
    _DTYPE = dt.type


@contextmanager
def precision(dtype):
    old = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tracked", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or _DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._tracked = False

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._tracked = False
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("only single-element tensors convert to a Python scalar")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    # numpy operands defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _DTYPE
    return Tensor._wrap(np.asarray(x, dtype=dtype))


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    fwd: Callable
    bwd: Callable
    ctx: Any
    kwargs: dict = field(default_factory=dict)


class Tape:
    """Ordered record of differentiable calls; used as a context manager."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self) -> bool:
        """Recompute every node from its inputs; True iff all outputs match bitwise."""
        ok = True
        for node in self.nodes:
            out, _ = node.fwd(*(t.data for t in node.inputs), **node.kwargs)
            if out.shape != node.output.data.shape or not np.array_equal(out, node.output.data):
                ok = False
        return ok


def current_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def apply(op: str, fwd: Callable, bwd: Callable, inputs: Sequence, **kwargs) -> Tensor:
    tensors = tuple(as_tensor(x) for x in inputs)
    out, ctx = fwd(*(t.data for t in tensors), **kwargs)
    result = Tensor._wrap(out)
    tape = current_tape()
    if tape is not None and any(t.requires_grad or t._tracked for t in tensors):
        result._tracked = True
        tape.nodes.append(Node(op, tensors, result, fwd, bwd, ctx, kwargs))
    return result


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    Gradients sum over fan-out. Leaves that never reach ``loss`` keep whatever
    is already in their buffer (zero after ``zero_grad``).
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    if not loss._tracked:
        return
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.output), None)
        if g is None:
            continue
        kw = node.kwargs
        if getattr(node.bwd, "wants_needs", False):
            kw = {**kw, "needs": tuple(t.requires_grad or t._tracked for t in node.inputs)}
        grads = node.bwd(g, node.ctx, *(t.data for t in node.inputs), **kw)
        for t, gi in zip(node.inputs, grads):
            if gi is None:
                continue
            if t.requires_grad:
                t.grad += gi
            elif t._tracked:
                key = id(t)
                pending[key] = pending[key] + gi if key in pending else gi


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _add_f(a, b):
    return a + b, None


def _add_b(g, ctx, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def add(a, b) -> Tensor:
    return apply("add", _add_f, _add_b, _coerce(a, b))


def _sub_f(a, b):
    return a - b, None


def _sub_b(g, ctx, a, b):
    return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)


def sub(a, b) -> Tensor:
    return apply("sub", _sub_f, _sub_b, _coerce(a, b))


def _mul_f(a, b):
    return a * b, None


def _mul_b(g, ctx, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def mul(a, b) -> Tensor:
    return apply("mul", _mul_f, _mul_b, _coerce(a, b))


def _div_f(a, b):
    return a / b, None


def _div_b(g, ctx, a, b):
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


def div(a, b) -> Tensor:
    return apply("div", _div_f, _div_b, _coerce(a, b))


def _coerce(a, b):
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return as_tensor(a, like), as_tensor(b, like)


def _matmul_f(a, b):
    return a @ b, None


def _matmul_b(g, ctx, a, b, needs=(True, True)):
    if a.ndim > 2 and b.ndim == 2:
        # batched rows times one matrix: fold the batch axes instead of broadcasting
        a2 = a.reshape(-1, a.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        return (g @ b.T if needs[0] else None), a2.T @ g2
    a2 = a if a.ndim > 1 else a[None, :]
    b2 = b if b.ndim > 1 else b[:, None]
    g2 = g[..., None] if b.ndim == 1 else g
    if a.ndim == 1:
        g2 = np.expand_dims(g2, -2)
    ga = g2 @ np.swapaxes(b2, -1, -2)
    gb = np.swapaxes(a2, -1, -2) @ g2
    ga = _unbroadcast(ga, a2.shape).reshape(a.shape)
    gb = _unbroadcast(gb, b2.shape).reshape(b.shape)
    return ga, gb


_matmul_b.wants_needs = True


def matmul(a, b) -> Tensor:
    return apply("matmul", _matmul_f, _matmul_b, _coerce(a, b))


def _relu_f(x):
    return np.maximum(x, 0.0), None


def _relu_b(g, ctx, x):
    return (g * (x > 0),)


def relu(x) -> Tensor:
    return apply("relu", _relu_f, _relu_b, (x,))


_GELU_C = np.sqrt(2.0 / np.pi)


def _gelu_f(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu_b(g, t, x):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)


def gelu(x) -> Tensor:
    """tanh-approximated GELU."""
    return apply("gelu", _gelu_f, _gelu_b, (x,))


def _sum_f(x, axis=None, keepdims=False):
    return np.asarray(x.sum(axis=axis, keepdims=keepdims)), None


def _sum_b(g, ctx, x, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    return apply("sum", _sum_f, _sum_b, (x,), axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def _reshape_f(x, shape):
    return x.reshape(shape), None


def _reshape_b(g, ctx, x, shape):
    return (g.reshape(x.shape),)


def reshape(x, shape) -> Tensor:
    return apply("reshape", _reshape_f, _reshape_b, (x,), shape=tuple(shape))


def _transpose_f(x, axes):
    return np.transpose(x, axes), None


def _transpose_b(g, ctx, x, axes):
    if axes is None:
        return (np.transpose(g),)
    return (np.transpose(g, np.argsort(axes)),)


def transpose(x, axes=None) -> Tensor:
    return apply("transpose", _transpose_f, _transpose_b, (x,), axes=None if axes is None else tuple(axes))


def _getitem_f(x, index):
    return np.array(x[index]), None


def _getitem_b(g, ctx, x, index):
    gx = np.zeros_like(x)
    np.add.at(gx, index, g)
    return (gx,)


def getitem(x, index) -> Tensor:
    return apply("getitem", _getitem_f, _getitem_b, (x,), index=index)


def _concat_f(*xs, axis):
    return np.concatenate(xs, axis=axis), None


def _concat_b(g, ctx, *xs, axis):
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, splits, axis=axis))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(x) for x in xs]
    return apply("concat", _concat_f, _concat_b, tensors, axis=axis)


def _broadcast_f(x, shape):
    return np.broadcast_to(x, shape).copy(), None


def _broadcast_b(g, ctx, x, shape):
    return (_unbroadcast(g, x.shape),)


def broadcast_to(x, shape) -> Tensor:
    return apply("broadcast_to", _broadcast_f, _broadcast_b, (x,), shape=tuple(shape))


class EmptySupportError(ValueError):
    pass


def _softmax_f(x, axis=-1, mask=None, allow_empty=False):
    if mask is None:
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=axis, keepdims=True)
        return y, y
    mask = np.broadcast_to(mask, x.shape)
    support = mask.any(axis=axis, keepdims=True)
    if not allow_empty and not support.all():
        raise EmptySupportError("empty attention support")
    # masked logits are excluded before normalization, never set to a finite sentinel
    z = np.where(mask, x, -np.inf)
    zmax = np.where(support, z.max(axis=axis, keepdims=True, initial=-np.inf), 0.0)
    e = np.where(mask, np.exp(np.where(mask, z - zmax, 0.0)), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    y = e / np.where(support, denom, 1.0)
    return y, y


def _softmax_b(g, y, x, axis=-1, mask=None, allow_empty=False):
    return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


def softmax(x, mask=None, axis: int = -1, allow_empty: bool = False) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False come out exactly 0.

    Rows whose mask is all False raise :class:`EmptySupportError` unless
    ``allow_empty`` is set, in which case they are all-zero.
    """
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
    return apply("softmax", _softmax_f, _softmax_b, (x,), axis=axis, mask=mask, allow_empty=allow_empty)


def _ln_f(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return gain * xhat + bias, (xhat, rstd)


def _ln_b(g, ctx, x, gain, bias, eps=1e-5):
    xhat, rstd = ctx
    gg = _unbroadcast(g * xhat, gain.shape)
    gb = _unbroadcast(g, bias.shape)
    gx_hat = g * gain
    gx = rstd * (
        gx_hat
        - gx_hat.mean(axis=-1, keepdims=True)
        - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
    )
    return gx, gg, gb


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis with population variance, then scale and shift."""
    x = as_tensor(x)
    return apply("layer_norm", _ln_f, _ln_b, (x, as_tensor(gain, x), as_tensor(bias, x)), eps=eps)


def _bce_f(z, y, mask=None):
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    if mask is None:
        return np.asarray(loss.mean()), loss.size
    m = np.broadcast_to(mask, z.shape)
    n = int(m.sum())
    if n == 0:
        return np.zeros((), dtype=z.dtype), 0
    return np.asarray(np.where(m, loss, 0.0).sum() / n), n


def _bce_b(g, n, z, y, mask=None):
    if n == 0:
        return np.zeros_like(z), None
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    gz = (sig - y) * (g / n)
    if mask is not None:
        gz = np.where(np.broadcast_to(mask, z.shape), gz, 0.0)
    return gz, None


def bce_with_logits(logits, targets, mask=None) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 targets over unmasked entries."""
    logits = as_tensor(logits)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
    return apply("bce", _bce_f, _bce_b, (logits, as_tensor(targets, logits)), mask=mask)
