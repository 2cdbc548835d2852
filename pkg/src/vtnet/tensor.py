"""Dense float tensors with reverse-mode differentiation.

Values live in numpy arrays, float32 for training and float64 for
verification work. Every operation checks its result for NaN/Inf, records
its inputs together with a backward closure, and ``grad`` replays the
recorded graph in reverse topological order to accumulate gradients.
Tensors are treated as immutable once created; the recorded graph is
confined to a single logical thread per forward/backward pass.
"""

from __future__ import annotations

import contextlib

import numpy as np

__all__ = [
    "Tensor",
    "NumericsError",
    "ShapeError",
    "grad",
    "fd_check",
    "no_grad",
    "finite_checks",
    "matmul",
    "add",
    "mul",
    "relu",
    "softmax_axis",
    "reshape",
    "transpose",
    "concat",
    "narrow",
    "tsum",
    "tmean",
]

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# Module-wide switches. Finite checks are on by default; no_grad() disables
# graph recording for forwards whose gradients are never consumed.
_state = {"finite_checks": True, "grad_enabled": True}


class NumericsError(ArithmeticError):
    """A value became NaN or Inf, or a numeric guard tripped."""


class ShapeError(ValueError):
    """Operands have incompatible shapes or axes."""


@contextlib.contextmanager
def finite_checks(enabled):
    """Temporarily enable or disable NaN/Inf validation of op results."""
    prev = _state["finite_checks"]
    _state["finite_checks"] = bool(enabled)
    try:
        yield
    finally:
        _state["finite_checks"] = prev


@contextlib.contextmanager
def no_grad():
    """Run forwards without recording the graph (saves memory on eval)."""
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


def _validate(arr):
    if _state["finite_checks"] and not np.isfinite(arr).all():
        raise NumericsError("tensor contains NaN or Inf")
    return arr


class Tensor:
    """A dense float array plus the bookkeeping reverse mode needs."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = _validate(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        """A constant view of the same values, cut off from the graph."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # Operator sugar; the free functions below do the real work.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _result(data, parents, backward):
    """Wrap an op result, recording the graph only when it can matter."""
    out = Tensor(data)
    if _state["grad_enabled"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _as_tensor(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_same_dtype(a, b):
    if a.dtype != b.dtype:
        raise TypeError(f"mixed dtypes: {a.dtype} vs {b.dtype}")


def add(a, b):
    """Elementwise sum with numpy broadcasting."""
    if not isinstance(b, Tensor):
        b = _as_tensor(b, a)
    _check_same_dtype(a, b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from exc

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(data, (a, b), backward)


def mul(a, b):
    """Elementwise product; also covers scaling by a python number."""
    if not isinstance(b, Tensor):
        scale = float(b)
        data = a.data * scale

        def backward_scalar(g):
            _accum(a, g * scale)

        return _result(data, (a,), backward_scalar)

    _check_same_dtype(a, b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from exc

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(data, (a, b), backward)


def matmul(a, b):
    """Matrix product; either operand may carry leading batch axes."""
    if not isinstance(b, Tensor):
        b = _as_tensor(b, a)
    _check_same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}") from exc

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _result(data, (a, b), backward)


def relu(x):
    data = np.maximum(x.data, 0)

    def backward(g):
        _accum(x, g * (x.data > 0))

    return _result(data, (x,), backward)


def softmax_axis(x, axis):
    """Softmax along one axis, computed with max subtraction for stability."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        _accum(x, s * (g - inner))

    return _result(s, (x,), backward)


def reshape(x, shape):
    shape = tuple(shape)
    if np.prod(shape, dtype=np.int64) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    data = x.data.reshape(shape)

    def backward(g):
        _accum(x, g.reshape(x.shape))

    return _result(data, (x,), backward)


def transpose(x, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"bad permutation {axes} for rank {x.ndim}")
    data = np.transpose(x.data, axes)
    inverse = np.argsort(axes)

    def backward(g):
        _accum(x, np.transpose(g, inverse))

    return _result(data, (x,), backward)


def concat(tensors, axis):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of nothing")
    for t in tensors[1:]:
        _check_same_dtype(tensors[0], t)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _result(data, tuple(tensors), backward)


def narrow(x, axis, start, length):
    """Contiguous slice of one axis."""
    if not (0 <= start and start + length <= x.shape[axis]):
        raise ShapeError(f"narrow [{start}:{start + length}] exceeds axis extent {x.shape[axis]}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = x.data[index].copy()

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[index] = g
            _accum(x, full)

    return _result(data, (x,), backward)


def tsum(x, axis=None, keepdims=False):
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape).copy())

    return _result(data, (x,), backward)


def tmean(x, axis=None, keepdims=False):
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape) / count)

    return _result(data, (x,), backward)


def _toposort(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order, visited


def grad(loss, params, allow_unused=False):
    """Reverse-mode gradients of a scalar loss for the given parameters.

    Returns a dict mapping each parameter tensor to a constant gradient
    tensor of the same shape. A parameter that never entered the recorded
    graph producing ``loss`` is an error unless ``allow_unused`` is set, in
    which case it gets a zero gradient (a classifier head ignores the last
    block's projected map, for example).
    """
    if loss.size != 1:
        raise ShapeError("grad expects a scalar loss")
    params = list(params)
    order, visited = _toposort(loss)
    missing = [p for p in params if id(p) not in visited]
    if missing and not allow_unused:
        raise ValueError(f"{len(missing)} parameter(s) were not used to compute the loss")
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    out = {}
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        out[p] = Tensor(g.copy())
    return out


def fd_check(f, params, eps=1e-5, samples=32, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the parameter list to a scalar Tensor and is re-evaluated
    with single coordinates nudged by +/- eps. The error at a coordinate is
    |analytic - numeric| / max(1, |analytic|); the max over all sampled
    coordinates is returned. Use float64 parameters and eps around 1e-5.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    rng = np.random.default_rng(rng)
    analytic = grad(f(params), params)

    sizes = [p.size for p in params]
    offsets = np.cumsum([0] + sizes)
    total = offsets[-1]
    n = min(samples, total)
    flat = rng.choice(total, size=n, replace=False)

    worst = 0.0
    for fi in np.sort(flat):
        k = int(np.searchsorted(offsets, fi, side="right") - 1)
        p, i = params[k], int(fi - offsets[k])
        saved = p.data.flat[i]
        with no_grad():
            p.data.flat[i] = saved + eps
            hi = float(f(params).data)
            p.data.flat[i] = saved - eps
            lo = float(f(params).data)
        p.data.flat[i] = saved
        numeric = (hi - lo) / (2.0 * eps)
        a = float(analytic[p].data.flat[i])
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
