"""Dense tensors with reverse-mode automatic differentiation.

A small NumPy-backed engine: every operation records its parent tensors
and a gradient closure, and ``backward`` walks the implicit graph once in
reverse topological order. Gradients land on leaf tensors only and
accumulate across calls until explicitly reset.

Two precision modes exist: float32 (training default) and float64 (used
by the finite-difference gradient checks). Within one mode, identical
inputs produce bitwise-identical outputs.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf as _erf, expit as _expit

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created tensors ('float32' or 'float64')."""
    global _default_dtype
    if isinstance(dtype, str):
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported dtype {dtype!r}, expected float32 or float64")
        dtype = _DTYPES[dtype]
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _default_dtype = dtype


def default_dtype():
    return _default_dtype


class precision:
    """Context manager that temporarily switches the default dtype."""

    def __init__(self, dtype):
        self.dtype = dtype
        self._saved = None

    def __enter__(self):
        self._saved = _default_dtype
        set_default_dtype(self.dtype)
        return self

    def __exit__(self, *exc):
        set_default_dtype(self._saved)
        return False


class Tensor:
    """A dense array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype != _default_dtype:
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._grad_fn = None

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # operator sugar; scalars and arrays are wrapped as constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(x, dtype=like.data.dtype)
    t.requires_grad = False
    t.grad = None
    t._parents = ()
    t._grad_fn = None
    return t


def _make(data: np.ndarray, parents, grad_fn) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    if any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._grad_fn = grad_fn
    else:
        t.requires_grad = False
        t._parents = ()
        t._grad_fn = None
    return t


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Populate leaf gradients of a scalar loss.

    Gradients accumulate across calls: running backward twice without
    zeroing doubles every leaf gradient.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")

    # DFS postorder (parents appended before children), then walk reversed
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is not None:
            for parent, pg in node._grad_fn(g):
                if not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
        elif node.requires_grad:
            # leaf: flush with a copy so siblings never alias one buffer
            node.grad = np.array(g) if node.grad is None else node.grad + g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def grad_fn(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape))]

    return _make(data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def grad_fn(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape))]

    return _make(data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def grad_fn(g):
        return [
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        ]

    return _make(data, (a, b), grad_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def grad_fn(g):
        return [
            (a, _unbroadcast(g / b.data, a.data.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        ]

    return _make(data, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: [(a, -g)])


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: [(a, g * (1.0 - y * y))])


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: [(a, g / a.data)])


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: [(a, g * 0.5 / y)])


def sigmoid(a: Tensor) -> Tensor:
    y = _expit(a.data)
    return _make(y, (a,), lambda g: [(a, g * y * (1.0 - y))])


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    y = np.logaddexp(np.zeros_like(a.data), a.data)
    return _make(y, (a,), lambda g: [(a, g * _expit(a.data))])


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form."""
    x = a.data
    phi = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    y = x * phi

    def grad_fn(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return [(a, g * (phi + x * pdf))]

    return _make(y.astype(x.dtype, copy=False), (a,), grad_fn)


def clamp_min(a: Tensor, lo: float) -> Tensor:
    data = np.maximum(a.data, lo)

    def grad_fn(g):
        return [(a, g * (a.data > lo))]

    return _make(data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# shape and reduction ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return [(a, _unbroadcast(ga, a.data.shape)), (b, _unbroadcast(gb, b.data.shape))]

    return _make(data, (a, b), grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    return _make(data, (a,), lambda g: [(a, g.reshape(a.data.shape))])


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)
    data = a.data.transpose(axes)
    return _make(data, (a,), lambda g: [(a, g.transpose(inv))])


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return [(a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True))]
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return [(a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True))]

    return _make(data, (a,), grad_fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for i in ax:
            count *= a.data.shape[i]
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, _as_tensor(1.0 / count, s))


def token_at(a: Tensor, t: int) -> Tensor:
    """Select position ``t`` along axis 1 of a (B, T, D) tensor."""
    data = a.data[:, t, :]

    def grad_fn(g):
        gx = np.zeros_like(a.data)
        gx[:, t, :] = g
        return [(a, gx)]

    return _make(data, (a,), grad_fn)


def narrow0(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice a[start:stop] along axis 0."""
    if not 0 <= start <= stop <= a.data.shape[0]:
        raise ValueError(f"slice [{start}:{stop}] out of range for axis of size {a.data.shape[0]}")
    data = a.data[start:stop]

    def grad_fn(g):
        gx = np.zeros_like(a.data)
        gx[start:stop] = g
        return [(a, gx)]

    return _make(data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# softmax family


def _norm_axis(axis, ndim):
    ax = axis if axis >= 0 else axis + ndim
    if not 0 <= ax < ndim:
        raise ValueError(f"axis {axis} out of range for ndim {ndim}")
    return ax


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; slices along ``axis`` sum to 1."""
    ax = _norm_axis(axis, a.data.ndim)
    if a.data.shape[ax] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=ax, keepdims=True)

    def grad_fn(g):
        return [(a, y * (g - (g * y).sum(axis=ax, keepdims=True)))]

    return _make(y, (a,), grad_fn)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, a.data.ndim)
    if a.data.shape[ax] == 0:
        raise ValueError("log_softmax over an empty axis")
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    y = shifted - lse

    def grad_fn(g):
        return [(a, g - np.exp(y) * g.sum(axis=ax, keepdims=True))]

    return _make(y, (a,), grad_fn)


# ---------------------------------------------------------------------------
# indexing ops


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradients scatter-add back into the table."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ValueError(
            f"embedding ids out of range [0, {table.data.shape[0]}): "
            f"min {idx.min()}, max {idx.max()}"
        )
    data = table.data[idx]

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return [(table, gt)]

    return _make(data, (table,), grad_fn)


def gather_last(a: Tensor, ids) -> Tensor:
    """Pick one entry along the last axis per leading index, e.g. logp[i, target_i]."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.shape != a.data.shape[:-1]:
        raise ValueError(f"index shape {idx.shape} does not match {a.data.shape[:-1]}")
    width = a.data.shape[-1]
    if idx.size and (idx.min() < 0 or idx.max() >= width):
        raise ValueError(f"gather index out of range [0, {width}): max {idx.max()}")
    data = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gx = np.zeros_like(a.data)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
        return [(a, gx)]

    return _make(data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# composite / stochastic ops


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv
    y = xn * gamma.data + beta.data

    def grad_fn(g):
        reduce_axes = tuple(range(g.ndim - 1))
        dgamma = (g * xn).sum(axis=reduce_axes).reshape(gamma.data.shape)
        dbeta = g.sum(axis=reduce_axes).reshape(beta.data.shape)
        dxn = g * gamma.data
        dx = inv * (
            dxn
            - dxn.mean(axis=-1, keepdims=True)
            - xn * (dxn * xn).mean(axis=-1, keepdims=True)
        )
        return [(x, dx), (gamma, dgamma), (beta, dbeta)]

    return _make(y, (x, gamma, beta), grad_fn)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Evaluation mode (training=False) and p=0 are exact identities.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    keep *= np.asarray(1.0 / (1.0 - p), dtype=x.data.dtype)
    data = x.data * keep

    def grad_fn(g):
        return [(x, g * keep)]

    return _make(data, (x,), grad_fn)


def cosine_similarity(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Cosine of the angle between two vectors, with an eps-guarded denominator.

    The guard max(|a||b|, eps) keeps the value defined when either vector is
    zero, which tanh-pooled encoders produce at all-zero initialization.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ValueError(f"cosine_similarity needs equal-length vectors, got {a.data.shape} and {b.data.shape}")
    num = tsum(mul(a, b))
    na = sqrt(tsum(mul(a, a)))
    nb = sqrt(tsum(mul(b, b)))
    return div(num, clamp_min(mul(na, nb), eps))
