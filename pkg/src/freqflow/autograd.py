"""Define-by-run reverse-mode differentiation over numpy arrays.

Every operation on a :class:`Tensor` that needs a gradient appends a node to
an implicit tape (nodes carry a monotonically increasing id, so sorting by id
reproduces forward execution order).  :func:`backward` walks the reachable
part of the tape once, in reverse, and then releases it.

Complex tensors use the split-real convention: the gradient of a real loss
with respect to ``z = a + ib`` is stored packed as ``dL/da + i dL/db``.  With
that convention the adjoint of ``y = u * w`` is ``g * conj(w)``, which is why
the backward rules below conjugate their saved operands.
"""

from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

from .errors import ContractError, DimensionError, GraphReuseError

_ids = itertools.count()
_local = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if np.iscomplexobj(arr):
        return arr.astype(np.complex128, copy=False)
    return arr.astype(np.float64, copy=False)


class Tensor:
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self._consumed = False
        self._id = next(_ids)

    # ------------------------------------------------------------------ basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        kind = "Parameter" if isinstance(self, Parameter) else "Tensor"
        return f"{kind}(shape={self.shape}, dtype={self.data.dtype})"

    def __len__(self):
        return len(self.data)

    # -------------------------------------------------------------- operators
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


class Parameter(Tensor):
    """A trainable leaf; ``grad`` always exists and matches ``data``."""

    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(np.array(_as_array(data), order="C", copy=True), requires_grad=trainable)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    @property
    def size(self) -> int:
        return self.data.size

    def n_real(self) -> int:
        """Number of real scalars (complex entries count twice)."""
        return self.data.size * (2 if self.is_complex else 1)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data, parents, backward_fn) -> Tensor:
    """Record an op: ``backward_fn(g)`` returns one adjoint (or None) per parent."""
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from exc


# --------------------------------------------------------------------- backward
def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable Parameter's ``grad``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphReuseError("graph already consumed by a previous backward call")
    if not loss.requires_grad:
        return

    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node._consumed:
            raise GraphReuseError("graph already consumed by a previous backward call")
        nodes.append(node)
        stack.extend(p for p in node._parents if p.requires_grad)
    nodes.sort(key=lambda n: n._id, reverse=True)

    grads = {id(loss): np.ones_like(loss.data)}
    for node in nodes:
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                if not np.iscomplexobj(node.data):
                    g = g.real
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad = node.grad + g
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if not np.iscomplexobj(parent.data):
                pg = np.real(pg)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    for node in nodes:
        if node._backward is not None:
            node._consumed = True
            node._backward = None
            node._parents = ()


# -------------------------------------------------------------- elementwise ops
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b), lambda g: (
        _unbroadcast(g * np.conj(bd), ad.shape),
        _unbroadcast(g * np.conj(ad), bd.shape),
    ))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data
    out = ad / bd

    def _bw(g):
        ga = g / np.conj(bd)
        gb = -g * np.conj(out / bd)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_node(out, (a, b), _bw)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    if exponent == 2:
        return square(a)
    return make_node(ad ** exponent, (a,),
                     lambda g: (g * np.conj(exponent * ad ** (exponent - 1)),))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_node(ad * ad, (a,), lambda g: (g * np.conj(2.0 * ad),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * np.conj(out),))


def maximum(a, floor: float) -> Tensor:
    """Clamp from below by a constant; entries at or below the floor get zero gradient."""
    a = as_tensor(a)
    mask = a.data > floor
    return make_node(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """tanh-form GELU."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    inner = _GELU_C * x * (1.0 + 0.044715 * x2)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def _bw(g):
        d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * d,)

    return make_node(out, (a,), _bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return make_node(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def conj(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.conj(a.data), (a,), lambda g: (np.conj(g),))


# ---------------------------------------------------------------- reductions
def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(a.data.sum(axis=axis, keepdims=keepdims), (a,), _bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


# ------------------------------------------------------------------- shaping
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer, type(Ellipsis), type(None))) for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.data.dtype
    basic = _is_basic_index(index)

    def _bw(g):
        out = np.zeros(shape, dtype=np.result_type(dtype, g.dtype))
        if basic:
            out[index] += g
        else:
            np.add.at(out, index, g)
        return (out,)

    return make_node(a.data[index], (a,), _bw)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                     lambda g: tuple(np.split(g, cuts, axis=axis)))


def pad_last(a, after: int) -> Tensor:
    """Append ``after`` zeros along the last axis."""
    a = as_tensor(a)
    if after == 0:
        return a
    n = a.shape[-1]
    width = [(0, 0)] * (a.ndim - 1) + [(0, after)]
    return make_node(np.pad(a.data, width), (a,), lambda g: (g[..., :n],))


# ------------------------------------------------------------- linear algebra
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D; reshape vectors explicitly")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def _bw(g):
        ga = g @ np.conj(np.swapaxes(bd, -1, -2))
        gb = np.conj(np.swapaxes(ad, -1, -2)) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_node(ad @ bd, (a, b), _bw)


# ------------------------------------------------------------ complex views
def split_real(z) -> Tensor:
    """Complex (..., K) -> real (..., 2K) with interleaved (re, im)."""
    z = as_tensor(z)
    out = np.ascontiguousarray(z.data.astype(np.complex128)).view(np.float64)
    return make_node(out.copy(), (z,), lambda g: (g[..., 0::2] + 1j * g[..., 1::2],))


def merge_complex(x) -> Tensor:
    """Real (..., 2K) interleaved -> complex (..., K)."""
    x = as_tensor(x)
    if x.shape[-1] % 2:
        raise DimensionError("split-real vector must have even length")
    out = x.data[..., 0::2] + 1j * x.data[..., 1::2]
    return make_node(out, (x,), lambda g: (np.ascontiguousarray(g).view(np.float64).copy(),))


def real_view(arr: np.ndarray) -> np.ndarray:
    """Writable float64 view of an array (complex entries become interleaved pairs)."""
    if np.iscomplexobj(arr):
        return arr.view(np.float64)
    return arr


# --------------------------------------------------------- complex primitives
def complex_mul(a, b) -> Tensor:
    """Elementwise complex product; amplitudes multiply and phases add."""
    return mul(a, b)


def complex_matvec(W, x, b) -> Tensor:
    """``y[j] = sum_k W[j, k] x[k] + b[j]``; ``x`` may carry leading batch axes."""
    W, x, b = as_tensor(W), as_tensor(x), as_tensor(b)
    if W.ndim != 2:
        raise DimensionError("W must be a matrix")
    if x.shape[-1] != W.shape[1]:
        raise DimensionError(f"x has {x.shape[-1]} entries, W expects {W.shape[1]}")
    if b.shape != (W.shape[0],):
        raise DimensionError(f"bias shape {b.shape} does not match {W.shape[0]} outputs")
    return add(matmul(x.reshape(x.shape[:-1] + (1, x.shape[-1])), transpose(W)).reshape(x.shape[:-1] + (W.shape[0],)), b)
