"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Operations record themselves on the innermost active :class:`Tape`. Outside a
tape nothing is recorded, which is how evaluation and sampling run without
gradient bookkeeping.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np

_DTYPE = [np.float32]
_TAPES: list["Tape"] = []

SIGMOID_CLAMP = 30.0


class ShapeError(ValueError):
    pass


def default_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for newly created tensors."""
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


class Tape:
    """Ordered record of the operations executed while the tape is active.

    Creation order is a topological order of the graph, so walking the record
    backwards visits every node after all of its consumers.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Tensor) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor, retain_graph: bool = False) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                # never mutate in place: backward functions may hand out aliases
                parent.grad = pg if parent.grad is None else parent.grad + pg
            if not retain_graph:
                node.grad = None
                node.backward_fn = None
        if not retain_graph:
            self.nodes.clear()


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.parents = ()
    out.backward_fn = None
    out.requires_grad = False
    if _TAPES and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        _TAPES[-1].record(out)
    return out


def _sum64(x: np.ndarray, axis=None, keepdims=False) -> np.ndarray:
    return np.sum(x, axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.dtype, copy=False)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    axes = list(range(lead))
    for i, n in enumerate(shape):
        if n == 1 and g.shape[lead + i] != 1:
            axes.append(lead + i)
    out = _sum64(g, axis=tuple(axes), keepdims=True)
    return out.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _node(ad * bd, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.data.dtype.type(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,), "log")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    c = x.dtype.type(_GELU_C)
    k = x.dtype.type(0.044715)
    inner = c * (x + k * x * x * x)
    t = np.tanh(inner)
    half = x.dtype.type(0.5)
    out = half * x * (1 + t)

    def backward(g):
        dinner = c * (1 + 3 * k * x * x)
        return (g * (half * (1 + t) + half * x * (1 - t * t) * dinner),)

    return _node(out, (a,), backward, "gelu")


def sigmoid(a) -> Tensor:
    """Logistic sigmoid with logits clamped to +-30.

    The output is additionally kept strictly inside (0, 1) at the working
    precision so that downstream log(1 - p) stays finite in float32.
    """
    a = as_tensor(a)
    dt = a.data.dtype
    z = np.clip(a.data, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    s = 1.0 / (1.0 + np.exp(-z))
    lo = np.finfo(dt).tiny
    hi = dt.type(1.0) - np.finfo(dt).epsneg
    s = np.clip(s, lo, hi).astype(dt, copy=False)
    inside = (a.data > -SIGMOID_CLAMP) & (a.data < SIGMOID_CLAMP)

    def backward(g):
        return (g * s * (1 - s) * inside,)

    return _node(s, (a,), backward, "sigmoid")


# ------------------------------------------------------------------- shaping


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def take(a, index) -> Tensor:
    """Advanced/basic indexing with a scatter-add backward."""
    a = as_tensor(a)
    shape, dt = a.shape, a.data.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dt)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.data[index], (a,), backward, "take")


def embedding_gather(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]}): min {ids.min()}, max {ids.max()}")
    shape, dt = table.shape, table.data.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dt)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return _node(table.data[ids], (table,), backward, "embedding")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# ------------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _node(ad @ bd, (a, b), backward, "matmul")


def linear(x, w, b=None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


# ------------------------------------------------------------------- reductions


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = _sum64(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ------------------------------------------------------------------- normalisation


def log_softmax(a) -> Tensor:
    """Row-wise (last axis) log-softmax, stabilised by max subtraction."""
    a = as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(_sum64(np.exp(shifted), axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * _sum64(g, axis=-1, keepdims=True),)

    return _node(out, (a,), backward, "log_softmax")


def softmax(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    s = e / _sum64(e, axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - _sum64(g * s, axis=-1, keepdims=True)),)

    return _node(s, (a,), backward, "softmax")


def layernorm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (a.shape[-1],) or beta.shape != (a.shape[-1],):
        raise ShapeError(f"layernorm: input {a.shape} vs affine {gamma.shape}/{beta.shape}")
    x = a.data
    dt = x.dtype
    h = x.shape[-1]
    mu = _sum64(x, axis=-1, keepdims=True) / dt.type(h)
    xc = x - mu
    var = _sum64(xc * xc, axis=-1, keepdims=True) / dt.type(h)
    inv = (1.0 / np.sqrt(var + dt.type(eps))).astype(dt)
    xhat = xc * inv
    gd = gamma.data

    def backward(g):
        gx = gb = gg = None
        if a.requires_grad:
            gh = g * gd
            gx = inv * (gh - _sum64(gh, axis=-1, keepdims=True) / dt.type(h)
                        - xhat * _sum64(gh * xhat, axis=-1, keepdims=True) / dt.type(h))
        if gamma.requires_grad:
            gg = _sum64((g * xhat).reshape(-1, h), axis=0)
        if beta.requires_grad:
            gb = _sum64(g.reshape(-1, h), axis=0)
        return gx, gg, gb

    return _node(xhat * gd + beta.data, (a, gamma, beta), backward, "layernorm")


def dropout(a, rate: float, rng: np.random.Generator | None) -> Tensor:
    a = as_tensor(a)
    if rate <= 0.0 or rng is None:
        return a
    keep = rng.random(a.shape, dtype=np.float32) >= rate
    mask = (keep / (1.0 - rate)).astype(a.data.dtype)
    return mul(a, Tensor(mask, dtype=a.data.dtype))
