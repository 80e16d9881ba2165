"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation that consumes a tensor with ``requires_grad`` records a node
(parents plus a backward closure) stamped with a global creation sequence
number.  Creation order is a valid forward execution order, so ``backward``
only has to walk the reachable nodes in decreasing sequence number.
"""
import contextlib
import itertools
import math

import numpy as np

from .errors import ContractError, DegenerateRowError, DimensionError

_SEQ = itertools.count()
_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, oracles)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "name")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = next(_SEQ)
        self.name = name

    @classmethod
    def _result(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data if data.dtype == np.float64 else data.astype(np.float64)
        out.grad = None
        out.name = None
        out._seq = next(_SEQ)
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    # -- introspection -------------------------------------------------
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

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    # -- operator sugar ------------------------------------------------
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
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(a.data / b.data, (a, b), backward)


def power(a, exponent):
    a = as_tensor(a)
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return Tensor._result(a.data ** exponent, (a,), backward)


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    """Matrix product, batched over leading axes like ``np.matmul``.

    ``b`` may be 1-D (matrix-vector product over the last axis of ``a``).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or (a.ndim == 1 and b.ndim == 1):
        raise DimensionError(f"matmul needs matrix operands, got {a.shape} and {b.shape}")
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if a.shape[-1] != inner_b:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if b.ndim == 1:
        def backward(g):
            ga = g[..., None] * b.data if a.requires_grad else None
            gb = None
            if b.requires_grad:
                gb = (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(axis=0)
            return ga, gb

        return Tensor._result(a.data @ b.data, (a, b), backward)
    if a.ndim == 1:
        raise DimensionError(f"matmul left operand must be at least 2-D, got {a.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # shared weight matrix: fold the batch axes so the weight gradient is one GEMM
        k, n = b.shape
        flat = a.data.reshape(-1, k)

        def backward(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = flat.T @ g2 if b.requires_grad else None
            return ga, gb

        return Tensor._result((flat @ b.data).reshape(a.shape[:-1] + (n,)), (a, b), backward)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor._result(a.data @ b.data, (a, b), backward)


def spmm(matrix, x):
    """Constant (possibly scipy-sparse) matrix times a dense 2-D tensor."""
    x = as_tensor(x)
    if matrix.shape[1] != x.shape[0]:
        raise DimensionError(f"spmm shape mismatch: {matrix.shape} @ {x.shape}")
    matrix_t = matrix.T

    def backward(g):
        return (np.asarray(matrix_t @ g),)

    return Tensor._result(np.asarray(matrix @ x.data), (x,), backward)


# -- reductions and shape ----------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = math.prod(a.shape[ax] for ax in axes)
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)

    def backward(g):
        return (g.reshape(a.shape),)

    return Tensor._result(a.data.reshape(shape), (a,), backward)


def broadcast_to(a, shape):
    a = as_tensor(a)

    def backward(g):
        return (unbroadcast(g, a.shape),)

    return Tensor._result(np.broadcast_to(a.data, shape).copy(), (a,), backward)


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return Tensor._result(np.transpose(a.data, axes), (a,), backward)


def swapaxes(a, ax1, ax2):
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def index(a, key):
    """Numpy-style indexing (basic or advanced); gradients scatter-add back."""
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return Tensor._result(np.asarray(a.data[key]), (a,), backward)


def embedding(table, ids):
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"embedding index out of range [0, {table.shape[0]}): min {ids.min()}, max {ids.max()}"
        )
    flat = ids.reshape(-1)
    width = table.shape[1]

    def backward(g):
        # bincount per column is much faster than np.add.at for tall tables
        g2 = g.reshape(-1, width)
        out = np.empty_like(table.data)
        rows = table.shape[0]
        for col in range(width):
            out[:, col] = np.bincount(flat, weights=g2[:, col], minlength=rows)
        return (out,)

    return Tensor._result(table.data[ids], (table,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# -- activations -------------------------------------------------------------

def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return Tensor._result(out, (a,), backward)


def log(a):
    a = as_tensor(a)

    def backward(g):
        return (g / a.data,)

    return Tensor._result(np.log(a.data), (a,), backward)


def clip(a, lo, hi):
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        return (g * inside,)

    return Tensor._result(np.clip(a.data, lo, hi), (a,), backward)


def relu(a):
    a = as_tensor(a)
    positive = a.data > 0

    def backward(g):
        return (g * positive,)

    return Tensor._result(np.where(positive, a.data, 0.0), (a,), backward)


def leaky_relu(a, slope=0.01):
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)

    def backward(g):
        return (g * scale,)

    return Tensor._result(a.data * scale, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor._result(out, (a,), backward)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor._result(out, (a,), backward)


def activation(a, kind, slope=0.01):
    """Dispatch by name: ``relu``, ``leakyrelu``, ``sigmoid`` or ``tanh``."""
    if kind == "relu":
        return relu(a)
    if kind in ("leakyrelu", "leaky_relu"):
        return leaky_relu(a, slope)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "tanh":
        return tanh(a)
    raise ValueError(f"unknown activation {kind!r}")


# -- normalisations ----------------------------------------------------------

def softmax(a, mask=None, axis=-1, allow_empty=False):
    """Numerically stable softmax along ``axis``.

    ``mask`` (boolean, broadcastable to ``a``) marks admissible entries;
    masked entries come out exactly 0.  A slice with no admissible entry is
    an error unless ``allow_empty``, in which case it comes out all zeros.
    """
    a = as_tensor(a)
    x = a.data
    if mask is None:
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        nonempty = mask.any(axis=axis, keepdims=True)
        if not allow_empty and not nonempty.all():
            raise DegenerateRowError("softmax over a fully masked row")
        masked = np.where(mask, x, -np.inf)
        peak = np.where(nonempty, masked.max(axis=axis, keepdims=True), 0.0)
        e = np.where(mask, np.exp(np.where(mask, x, 0.0) - peak), 0.0)
        total = e.sum(axis=axis, keepdims=True)
        out = e / np.where(nonempty, total, 1.0)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (a,), backward)


def softmax_rows(a, mask=None):
    """Row-wise softmax of a matrix; see :func:`softmax`."""
    return softmax(a, mask=mask, axis=-1)


def logsumexp(a, axis=-1):
    a = as_tensor(a)
    peak = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - peak)
    total = e.sum(axis=axis, keepdims=True)
    out = (peak + np.log(total)).squeeze(axis)
    weights = e / total

    def backward(g):
        return (np.expand_dims(g, axis) * weights,)

    return Tensor._result(np.asarray(out), (a,), backward)


def l2_normalize_rows(a, eps=1e-12):
    """Scale each row (last axis) to unit norm; near-zero rows pass through."""
    a = as_tensor(a)
    norms = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    tiny = norms < eps
    safe = np.where(tiny, 1.0, norms)
    out = a.data / safe

    def backward(g):
        proj = (g * out).sum(axis=-1, keepdims=True)
        return (np.where(tiny, g, (g - out * proj) / safe),)

    return Tensor._result(out, (a,), backward)


def layer_norm(a, gamma, beta, eps=1e-5):
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    mu = a.data.mean(axis=-1, keepdims=True)
    centred = a.data - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std

    def backward(g):
        gx = None
        if a.requires_grad:
            gh = g * gamma.data
            gx = inv_std * (
                gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        gg = unbroadcast(g * xhat, gamma.shape) if gamma.requires_grad else None
        gb = unbroadcast(g, beta.shape) if beta.requires_grad else None
        return gx, gg, gb

    return Tensor._result(xhat * gamma.data + beta.data, (a, gamma, beta), backward)


def dropout(a, p, rng, training=True):
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return a
    if p >= 1.0:
        raise ValueError("dropout probability must be < 1")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return mul(a, keep)


# -- backward ------------------------------------------------------------

class Tape:
    """Nodes reachable from a root, in forward (creation) order."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root):
        seen = {id(root)}
        stack = [root]
        nodes = []
        while stack:
            node = stack.pop()
            nodes.append(node)
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    seen.add(id(parent))
                    stack.append(parent)
        nodes.sort(key=lambda n: n._seq)
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaf gradients add onto whatever is already stored; intermediate nodes
    get their gradient overwritten.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
        raise ContractError(f"backward needs a scalar loss, got shape {shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not on the tape (no input requires grad)")
    tape = Tape.from_root(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return tape
