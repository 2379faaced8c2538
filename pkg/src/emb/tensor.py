"""Dense-tensor reverse-mode autodiff engine.

Tensors wrap contiguous numpy arrays (float32 for training, float64 for
verification) and record the operations applied to them.  Calling
``backward()`` on a scalar walks the recorded graph in reverse topological
order and accumulates gradients into every reachable tensor that has
``requires_grad`` set.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class AutodiffError(RuntimeError):
    pass


_GRAD_ENABLED = True
_FORWARD_CHECKS = False


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference-only forward)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_forward_checks(enabled):
    """Validate finiteness of every op output (slow; meant for tests)."""
    global _FORWARD_CHECKS
    _FORWARD_CHECKS = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw arrays, not Tensors")
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise AutodiffError(f"non-finite values in tensor {name or '<unnamed>'}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # --- introspection ---
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, op={self._op!r}{req}{nm})"

    # --- graph construction ---
    @staticmethod
    def _result(data, parents, backward, op):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        out._op = op
        if _FORWARD_CHECKS and not np.all(np.isfinite(data)):
            raise AutodiffError(f"non-finite forward output of op {op!r}")
        return out

    def _acc(self, g):
        """Accumulate a gradient array this tensor may take ownership of."""
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    def _acc_shared(self, g):
        """Accumulate a gradient that aliases another node's buffer."""
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise AutodiffError(f"backward requires a scalar loss, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            g = node.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise AutodiffError(f"non-finite gradient at op {node._op!r} (name={node.name!r})")
            node._backward(g)
            if node is not self:
                node.grad = None  # intermediates are freed eagerly

    # --- operator sugar ---
    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, -_wrap(other, self))

    def __rsub__(self, other):
        return add(-self, _wrap(other, self))

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        raise TypeError("tensor/tensor division is not a supported kernel")

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def _toposort(root):
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_same_dtype(op, *tensors):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise AutodiffError(f"{op}: mixed dtypes {dt} and {t.dtype}")


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --- primitive kernels ---

def add(a, b):
    _check_same_dtype("add", a, b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            a._acc(ga) if ga.base is None and ga is not g else a._acc_shared(ga)
        if b.requires_grad:
            gb = _unbroadcast(g, b.data.shape)
            b._acc(gb) if gb.base is None and gb is not g else b._acc_shared(gb)

    return Tensor._result(data, (a, b), backward, "add")


def mul(a, b):
    """Hadamard product with numpy broadcasting."""
    _check_same_dtype("mul", a, b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._acc(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(g * a.data, b.data.shape))

    return Tensor._result(data, (a, b), backward, "mul")


def scale(a, s):
    s = a.dtype.type(s)
    data = a.data * s

    def backward(g):
        if a.requires_grad:
            a._acc(g * s)

    return Tensor._result(data, (a,), backward, "scale")


def matmul(a, b):
    """Matrix product; leading batch dimensions broadcast like numpy."""
    _check_same_dtype("matmul", a, b)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise AutodiffError(f"matmul: inner dims {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._acc(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return Tensor._result(data, (a, b), backward, "matmul")


def transpose(a, axes=None):
    data = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._acc_shared(np.transpose(g, inv))

    return Tensor._result(data, (a,), backward, "transpose")


def reshape(a, shape):
    data = a.data.reshape(shape)
    orig = a.data.shape

    def backward(g):
        if a.requires_grad:
            a._acc_shared(g.reshape(orig))

    return Tensor._result(data, (a,), backward, "reshape")


def concat(tensors, axis=0):
    """Concatenation; shapes beside `axis` must agree (broadcast done by caller)."""
    tensors = list(tensors)
    _check_same_dtype("concat", *tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._acc_shared(g[tuple(idx)])

    return Tensor._result(data, tuple(tensors), backward, "concat")


def take(a, indices, axis):
    """Gather slices along `axis` by a 1-D index array (duplicates allowed)."""
    indices = np.asarray(indices, dtype=np.intp)
    data = np.take(a.data, indices, axis=axis)

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            tgt = np.moveaxis(ga, axis, 0)
            np.add.at(tgt, indices, np.moveaxis(g, axis, 0))
            a._acc(ga)

    return Tensor._result(data, (a,), backward, "take")


def reduce_sum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._acc(np.broadcast_to(g, a.data.shape).copy())

    return Tensor._result(np.asarray(data, dtype=a.dtype), (a,), backward, "sum")


def reduce_mean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        n = int(np.prod([a.data.shape[i] for i in np.atleast_1d(axis)]))
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reduce_max(a, axis, keepdims=False):
    """Max over one axis; gradient routes to the first argmax (deterministic)."""
    data = a.data.max(axis=axis, keepdims=True)
    hit = np.zeros_like(a.data)
    am = a.data.argmax(axis=axis)
    np.put_along_axis(hit, np.expand_dims(am, axis), 1.0, axis=axis)

    def backward(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._acc(hit * g)

    out = data if keepdims else data.squeeze(axis)
    return Tensor._result(out, (a,), backward, "max")


def exp(a):
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._acc(g * data)

    return Tensor._result(data, (a,), backward, "exp")


def log(a):
    data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._acc(g / a.data)

    return Tensor._result(data, (a,), backward, "log")


def tanh(a):
    data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._acc(g * (1.0 - data * data))

    return Tensor._result(data, (a,), backward, "tanh")


def sigmoid(a):
    e = np.exp(-np.abs(a.data))
    data = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        if a.requires_grad:
            a._acc(g * data * (1.0 - data))

    return Tensor._result(data, (a,), backward, "sigmoid")


def clamp(a, lo=None, hi=None):
    """Clip values; gradient is zero outside the active range."""
    data = np.clip(a.data, lo, hi)
    inside = np.ones_like(a.data)
    if lo is not None:
        inside *= a.data >= lo
    if hi is not None:
        inside *= a.data <= hi

    def backward(g):
        if a.requires_grad:
            a._acc(g * inside)

    return Tensor._result(data, (a,), backward, "clamp")
