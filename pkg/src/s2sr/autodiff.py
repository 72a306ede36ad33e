"""Minimal reverse-mode automatic differentiation over numpy arrays.

Design points:
  - a Tensor wraps one ndarray plus the closures needed to push
    gradients to its parents; graphs are built eagerly by the ops below.
  - gradients are accumulated only on requires_grad leaves; calling
    :func:`backward` twice on the same root is an error.
  - every op validates that its output is finite, so NaN/Inf surface at
    the op that produced them instead of corrupting a training run.
  - float32 is the working precision; the :func:`precision` context
    switches newly created tensors to float64 for finite-difference
    gradient checks, which are hopeless at single precision.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import AutodiffError, NumericError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for newly created tensors."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise AutodiffError("precision must be float32 or float64")
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = dtype
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; ops inside return plain constant tensors."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """An ndarray joined to the graph that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_op", "_backward_ran")

    def __init__(self, data, requires_grad=False, _parents=(), _op="leaf"):
        if isinstance(data, Tensor):
            raise AutodiffError("cannot nest tensors")
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._op = _op
        self._backward_ran = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise AutodiffError("item() needs a single-element tensor")
        return float(self.data.reshape(()))

    # -- operator sugar, all routed through the op functions below --
    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self)))

    def __rsub__(self, other):
        return add(_wrap(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self))

    def __rtruediv__(self, other):
        return div(_wrap(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return narrow(self, key)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return absolute(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    """Create a leaf tensor in the current (or given) float dtype."""
    arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=requires_grad)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _check_dtypes(op, *tensors):
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise AutodiffError(f"{op}: mixed dtypes {sorted(map(str, dtypes))}")


def from_op(data, parents, op: str) -> Tensor:
    """Build the output node of an op; parents are (tensor, vjp) pairs."""
    data = np.asarray(data)
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by op '{op}'")
    if _GRAD_ENABLED and any(p.requires_grad for p, _ in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _op=op)
    return Tensor(data, _op=op)


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss; fills grads of requires_grad leaves."""
    if loss.data.size != 1:
        raise AutodiffError("backward requires a scalar loss")
    if loss._backward_ran:
        raise AutodiffError("backward was already called on this graph root")
    loss._backward_ran = True

    # iterative topological order (graphs are deep at K=6 stages)
    topo = []
    state = {}  # id -> 0 visiting, 1 done
    stack = [(loss, iter([p for p, _ in loss._parents]))]
    state[id(loss)] = 0
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            mark = state.get(id(parent))
            if mark is None:
                state[id(parent)] = 0
                stack.append((parent, iter([p for p, _ in parent._parents])))
                advanced = True
                break
            if mark == 0:
                raise AutodiffError("cycle detected in autodiff graph")
        if not advanced:
            stack.pop()
            state[id(node)] = 1
            topo.append(node)

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, vjp in node._parents:
            if not (parent.requires_grad or parent._parents):
                continue
            contribution = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contribution
            else:
                grads[key] = contribution


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("add", a, b)
    return from_op(
        a.data + b.data,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
        "add",
    )


def neg(a: Tensor) -> Tensor:
    return from_op(-a.data, [(a, lambda g: -g)], "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("mul", a, b)
    return from_op(
        a.data * b.data,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.shape)),
        ],
        "mul",
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return from_op(
        out,
        [
            (a, lambda g: _unbroadcast(g / b.data, a.shape)),
            (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        ],
        "div",
    )


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = a.data**p
    return from_op(out, [(a, lambda g: g * p * a.data ** (p - 1.0))], "pow")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return from_op(np.maximum(a.data, 0), [(a, lambda g: g * mask)], "relu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return from_op(out, [(a, lambda g: g * out)], "exp")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return from_op(out, [(a, lambda g: g / (2.0 * out))], "sqrt")


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return from_op(np.abs(a.data), [(a, lambda g: g * sign)], "abs")


# ----------------------------------------------------------------- reductions


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).astype(a.dtype, copy=True)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, tuple(ax % a.data.ndim for ax in axes))
        return np.broadcast_to(g, a.shape).astype(a.dtype, copy=True)

    return from_op(out, [(a, vjp)], "sum")


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax % a.data.ndim] for ax in axes]))
    summed = reduce_sum(a, axis=axis, keepdims=keepdims)
    return mul(summed, Tensor(np.asarray(1.0 / count, dtype=a.dtype)))


def reduce_max_last(a: Tensor) -> np.ndarray:
    """Row max over the last axis as a detached constant (for softmax)."""
    return a.data.max(axis=-1, keepdims=True)


# ------------------------------------------------------------------ structure


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return from_op(a.data.reshape(shape), [(a, lambda g: g.reshape(a.shape))], "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return from_op(
        a.data.transpose(axes), [(a, lambda g: g.transpose(inverse))], "transpose"
    )


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    _check_dtypes("concat", *tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    parents = []
    offset = 0
    for t in tensors:
        extent = t.shape[axis]
        start = offset

        def vjp(g, start=start, extent=extent):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, start + extent)
            return g[tuple(index)]

        parents.append((t, vjp))
        offset += extent
    return from_op(out, parents, "concat")


def pad_const(a: Tensor, pads, value: float = 0.0) -> Tensor:
    """Constant-pad; `pads` is ((lo,hi), ...) per axis."""
    pads = tuple((int(lo), int(hi)) for lo, hi in pads)
    out = np.pad(a.data, pads, mode="constant", constant_values=value)

    def vjp(g):
        index = tuple(
            slice(lo, g.shape[i] - hi) for i, (lo, hi) in enumerate(pads)
        )
        return g[tuple(index)]

    return from_op(out, [(a, vjp)], "pad")


def narrow(a: Tensor, key) -> Tensor:
    """Basic slicing (no strides); gradient scatters into zeros."""
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not isinstance(k, slice) or k.step not in (None, 1):
            raise AutodiffError("only contiguous slices are differentiable")
    out = a.data[key]

    def vjp(g):
        buf = np.zeros(a.shape, dtype=a.dtype)
        buf[key] = g
        return buf

    return from_op(out, [(a, vjp)], "narrow")


# -------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise AutodiffError("matmul expects rank-2 operands")
    return from_op(
        a.data @ b.data,
        [(a, lambda g: g @ b.data.T), (b, lambda g: a.data.T @ g)],
        "matmul",
    )


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul: [B,n,k] @ [B,k,m] -> [B,n,m]."""
    _check_dtypes("bmm", a, b)
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise AutodiffError("bmm expects rank-3 operands")
    return from_op(
        a.data @ b.data,
        [
            (a, lambda g: g @ b.data.transpose(0, 2, 1)),
            (b, lambda g: a.data.transpose(0, 2, 1) @ g),
        ],
        "bmm",
    )


def softmax_last(a: Tensor) -> Tensor:
    """Softmax along the last axis, stabilized by row-max subtraction."""
    shift = Tensor(reduce_max_last(a))  # constant: shift invariance of softmax
    e = exp(add(a, neg(shift)))
    return div(e, reduce_sum(e, axis=-1, keepdims=True))


def softmax_rows(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise AutodiffError("softmax_rows expects a rank-2 tensor")
    return softmax_last(a)
