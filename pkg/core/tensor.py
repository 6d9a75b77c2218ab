# core/tensor.py → Differentiable Arrays
# Role: Reverse-mode automatic differentiation over float64 numpy buffers.

# Responsibilities:

# DiffArray: value buffer, lazily allocated gradient, record of the op that produced it

# Elementwise / reduction / shape ops with broadcasting-aware gradients

# Network ops (conv1d, max-pool, nearest upsample, embedding lookup, dropout, group norm)

# backward(): topological traversal from a scalar loss, summing over reuse

# Dependencies:

# numpy, scipy.special (logistic)

# core/tensor.py

from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence, Tuple
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from core.errors import InvalidInputError, ShapeError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def inference():
    """Evaluate without recording the graph (thread-local)."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class DiffArray:
    __array_ufunc__ = None  # numpy defers to the reflected operators below

    def __init__(self, value, requires_grad: bool = False, parents: Tuple["DiffArray", ...] = (),
                 backward_fn: Optional[Callable] = None, op: str = "", name: Optional[str] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = parents
        self._backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def detach(self) -> "DiffArray":
        return DiffArray(self.value)

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match value shape {self.value.shape} ({self.op or self.name})")
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

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

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self):
        return f"<DiffArray shape={self.shape} op={self.op or 'leaf'} grad={'yes' if self.requires_grad else 'no'}>"


def as_array(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def parameter(value, name: Optional[str] = None) -> DiffArray:
    return DiffArray(value, requires_grad=True, name=name)


def _result(value, parents: Sequence[DiffArray], backward_fn: Callable, op: str) -> DiffArray:
    if grad_enabled() and any(p.requires_grad for p in parents):
        return DiffArray(value, True, tuple(parents), backward_fn, op)
    return DiffArray(value, op=op)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _topological(root: DiffArray):
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: DiffArray) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's .grad."""
    if loss.value.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    for node in order:
        if node._backward_fn is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward_fn is None or node.grad is None:
            continue
        grads = node._backward_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is not None and parent.requires_grad:
                parent._accumulate(g)


# --- elementwise -----------------------------------------------------------

def add(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _result(a.value + b.value, (a, b), _backward, "add")


def sub(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _result(a.value - b.value, (a, b), _backward, "sub")


def mul(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)

    def _backward(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)
    return _result(a.value * b.value, (a, b), _backward, "mul")


def div(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)

    def _backward(g):
        return (_unbroadcast(g / b.value, a.shape),
                _unbroadcast(-g * a.value / (b.value ** 2), b.shape))
    return _result(a.value / b.value, (a, b), _backward, "div")


def neg(a) -> DiffArray:
    a = as_array(a)
    return _result(-a.value, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> DiffArray:
    a = as_array(a)
    out = a.value ** exponent

    def _backward(g):
        return (g * exponent * a.value ** (exponent - 1),)
    return _result(out, (a,), _backward, "pow")


def exp(a) -> DiffArray:
    a = as_array(a)
    out = np.exp(a.value)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> DiffArray:
    a = as_array(a)
    return _result(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def sqrt(a) -> DiffArray:
    a = as_array(a)
    out = np.sqrt(a.value)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def sigmoid(a) -> DiffArray:
    a = as_array(a)
    out = expit(a.value)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> DiffArray:
    a = as_array(a)
    mask = a.value > 0
    return _result(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, negative_slope: float = 0.2) -> DiffArray:
    a = as_array(a)
    slope = np.where(a.value > 0, 1.0, negative_slope)
    return _result(a.value * slope, (a,), lambda g: (g * slope,), "leaky_relu")


def clip(a, low: float, high: float) -> DiffArray:
    """Clamp values; gradient passes only where the input lies inside [low, high]."""
    a = as_array(a)
    mask = (a.value >= low) & (a.value <= high)
    return _result(np.clip(a.value, low, high), (a,), lambda g: (g * mask,), "clip")


# --- reductions and shape ------------------------------------------------------

def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> DiffArray:
    a = as_array(a)
    axes = _normalize_axes(axis, a.ndim)
    out = a.value.sum(axis=axes, keepdims=keepdims)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)
    return _result(out, (a,), _backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> DiffArray:
    a = as_array(a)
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return sum_(a, axis=axes, keepdims=keepdims) * (1.0 / max(count, 1))


def reshape(a, shape) -> DiffArray:
    a = as_array(a)
    out = a.value.reshape(shape)
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a, index) -> DiffArray:
    a = as_array(a)

    def _backward(g):
        out = np.zeros_like(a.value)
        np.add.at(out, index, g)
        return (out,)
    return _result(a.value[index], (a,), _backward, "getitem")


def concat(arrays: Iterable, axis: int = -1) -> DiffArray:
    arrays = [as_array(x) for x in arrays]
    axis = axis % arrays[0].ndim
    sizes = [x.shape[axis] for x in arrays]
    out = np.concatenate([x.value for x in arrays], axis=axis)

    def _backward(g):
        cuts = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, cuts, axis=axis))
    return _result(out, arrays, _backward, "concat")


def pad_last(a, left: int, right: int) -> DiffArray:
    """Zero-pad the last axis."""
    a = as_array(a)
    widths = [(0, 0)] * (a.ndim - 1) + [(left, right)]
    length = a.shape[-1]
    return _result(np.pad(a.value, widths), (a,), lambda g: (g[..., left:left + length],), "pad")


def matmul(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul expects (n,k)@(k,m), got {a.shape} @ {b.shape}")

    def _backward(g):
        return g @ b.value.T, a.value.T @ g
    return _result(a.value @ b.value, (a, b), _backward, "matmul")


def log_softmax(a, axis: int = -1) -> DiffArray:
    a = as_array(a)
    shifted = a - a.value.max(axis=axis, keepdims=True)
    return shifted - log(sum_(exp(shifted), axis=axis, keepdims=True))


# --- network ops ---------------------------------------------------------------

def conv1d(x, weight, bias, stride: int = 1) -> DiffArray:
    """Cross-correlation over (N, C_in, L) with zero 'same' padding: length kept at stride 1."""
    x, weight, bias = as_array(x), as_array(weight), as_array(bias)
    if x.ndim != 3:
        raise ShapeError(f"conv1d expects (N, C, L) input, got {x.shape}")
    n, c_in, length = x.shape
    c_out, c_w, k = weight.shape
    if c_in != c_w:
        raise ShapeError(f"conv1d input has {c_in} channels, kernel expects {c_w}")
    left = (k - 1) // 2
    right = k - 1 - left
    xp = np.pad(x.value, ((0, 0), (0, 0), (left, right)))
    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    out = np.einsum("nclk,ock->nol", windows, weight.value, optimize=True) + bias.value[None, :, None]

    def _backward(g):
        l_out = g.shape[2]
        gw = np.einsum("nclk,nol->ock", windows, g, optimize=True)
        gb = g.sum(axis=(0, 2))
        gxp = np.zeros_like(xp)
        stop = stride * (l_out - 1) + 1
        for j in range(k):
            gxp[:, :, j:j + stop:stride] += np.einsum("nol,oc->ncl", g, weight.value[:, :, j], optimize=True)
        return gxp[:, :, left:left + length], gw, gb
    return _result(out, (x, weight, bias), _backward, "conv1d")


def maxpool1d(x) -> DiffArray:
    """Window 2, stride 2; an odd trailing sample is dropped."""
    x = as_array(x)
    n, c, length = x.shape
    half = length // 2
    if half == 0:
        raise ShapeError(f"maxpool1d needs length >= 2, got {length}")
    blocks = x.value[:, :, :2 * half].reshape(n, c, half, 2)
    idx = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def _backward(g):
        gb = np.zeros((n, c, half, 2))
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        gx = np.zeros_like(x.value)
        gx[:, :, :2 * half] = gb.reshape(n, c, 2 * half)
        return (gx,)
    return _result(out, (x,), _backward, "maxpool1d")


def upsample_nearest(x, factor: int = 2) -> DiffArray:
    x = as_array(x)
    out = np.repeat(x.value, factor, axis=-1)

    def _backward(g):
        return (g.reshape(*x.shape, factor).sum(axis=-1),)
    return _result(out, (x,), _backward, "upsample")


def embedding_lookup(table, indices) -> DiffArray:
    table = as_array(table)
    indices = np.asarray(indices, dtype=np.int64)

    def _backward(g):
        out = np.zeros_like(table.value)
        np.add.at(out, indices, g)
        return (out,)
    return _result(table.value[indices], (table,), _backward, "embedding")


def dropout(x, p: float, rng: Optional[np.random.Generator], train: bool) -> DiffArray:
    """Inverted dropout: identity in eval mode, expectation preserved in train mode."""
    x = as_array(x)
    if not train or p <= 0.0:
        return x
    if rng is None:
        raise InvalidInputError("dropout in train mode needs an explicit random stream")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, DiffArray(mask))


def group_norm(x, groups: int, gamma, beta, eps: float = 1e-5) -> DiffArray:
    x = as_array(x)
    n, c, length = x.shape
    if c % groups:
        raise ShapeError(f"group_norm: {c} channels not divisible by {groups} groups")
    xg = reshape(x, (n, groups, (c // groups) * length))
    centered = xg - mean(xg, axis=2, keepdims=True)
    var = mean(centered * centered, axis=2, keepdims=True)
    normed = reshape(centered * power(var + eps, -0.5), (n, c, length))
    return normed * reshape(gamma, (1, c, 1)) + reshape(beta, (1, c, 1))


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# --- randomness and checking -------------------------------------------------

def sample_gaussian(shape, stream: np.random.Generator) -> DiffArray:
    """Standard normal constant drawn from an explicit generator stream."""
    return DiffArray(stream.standard_normal(shape))


def finite_difference_grad(loss_fn: Callable[[], float], value: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function w.r.t. every entry of `value` (perturbed in place)."""
    grad = np.zeros_like(value)
    flat, gflat = value.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)
