"""Reverse-mode differentiable tensors backed by numpy arrays.

Every op that receives at least one input with ``requires_grad`` records its
inputs and a local backward rule on the output tensor. :func:`build_tape`
linearises that graph into a topologically ordered :class:`GradTape`, and
:func:`backward` walks it in reverse. Once backward has run, the interior
nodes release their references (the tape is consumed); gradients accumulate
only on leaf tensors.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when an op receives inputs with incompatible shapes."""


_state = threading.local()
_default_dtype = np.float64


def set_default_dtype(dtype):
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


def is_grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _default_dtype
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = None
        self._parents = ()
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

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

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


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data, parents, backward_fn, op):
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.op = op
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


@dataclass
class GradTape:
    """Recorded operations in topological order (producers before consumers)."""

    nodes: list = field(default_factory=list)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def build_tape(output):
    order = []
    seen = set()
    stack = [(output, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return GradTape(order)


def backward(output):
    if not isinstance(output, Tensor):
        raise TypeError("backward expects a Tensor")
    if output.size != 1:
        raise ShapeError(f"backward: output must be scalar, got shape {output.shape}")
    if not output.requires_grad:
        raise RuntimeError("backward: output does not require grad (nothing recorded on the tape)")
    tape = build_tape(output)
    grads = {id(output): np.ones_like(output.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in tape.nodes:
        if node._backward is not None:
            node._parents = ()
            node._backward = None


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(a.data + b.data, (a, b), _bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(a.data - b.data, (a, b), _bw, "sub")


def neg(a):
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def _bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(a.data * b.data, (a, b), _bw, "mul")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x):
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)
    return _record(y, (x,), lambda g: (g * y,), "exp")


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise ValueError(f"log: non-positive input (min {x.data.min()})")
    return _record(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def clamp_min(x, floor):
    x = as_tensor(x)
    keep = x.data >= floor
    return _record(np.maximum(x.data, floor), (x,), lambda g: (g * keep,), "clamp_min")


# reductions and shape ops

def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(np.asarray(y), (x,), _bw, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def tmin(x, axis):
    """Minimum along ``axis``; the gradient goes to the first minimiser only."""
    x = as_tensor(x)
    idx = np.argmin(x.data, axis=axis)
    y = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)
    y = np.squeeze(y, axis=axis)

    def _bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _record(y, (x,), _bw, "min")


def reshape(x, shape):
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return _record(y, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def flatten(x):
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"flatten: expected at least 2 dims, got {x.shape}")
    return reshape(x, (x.shape[0], -1))


def transpose(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _record(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x, index):
    x = as_tensor(x)
    y = x.data[index]

    items = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)

    def _bw(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[index] += g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return _record(np.array(y), (x,), _bw, "getitem")


def gather(x, index):
    """Pick ``x[i, index[i]]`` for every row of a 2-D tensor."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError(f"gather: expected (N, C) input and (N,) index, got {x.shape} and {index.shape}")
    rows = np.arange(x.shape[0])

    def _bw(g):
        gx = np.zeros_like(x.data)
        gx[rows, index] = g
        return (gx,)

    return _record(x.data[rows, index], (x,), _bw, "gather")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, other)) if i != axis % len(ref)):
            raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _bw, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {[t.shape for t in tensors]}")

    def _bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _record(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), _bw, "stack")


# linear algebra and convolution

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def _bw(g):
        return g @ b.data.T, a.data.T @ g

    return _record(a.data @ b.data, (a, b), _bw, "matmul")


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation, NCHW input and (O, C, kh, kw) weight."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {weight.shape[2:]} larger than padded input {x.shape[2:]}")
    cols = kernels.im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")
        out = out + bias.data
        parents.append(bias)
    y = out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)

    def _bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(weight.shape)
        gx = kernels.col2im(g2 @ wmat, x.shape, kh, kw, stride, padding) if x.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _record(np.ascontiguousarray(y), tuple(parents), _bw, "conv2d")


def maxpool2d(x, kernel=2, stride=None):
    x = as_tensor(x)
    stride = stride or kernel
    if x.ndim != 4 or x.shape[2] < kernel or x.shape[3] < kernel:
        raise ShapeError(f"maxpool2d: input {x.shape} too small for kernel {kernel}")
    out, arg = kernels.maxpool_forward(x.data, kernel, stride)

    def _bw(g):
        return (kernels.maxpool_backward(g, arg, x.shape, kernel, stride),)

    return _record(out, (x,), _bw, "maxpool2d")


def upsample2d(x, factor=2):
    """Nearest-neighbour upsampling of an NCHW tensor."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample2d: expected NCHW input, got {x.shape}")
    y = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    n, c, h, w = x.shape

    def _bw(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _record(y, (x,), _bw, "upsample2d")


# probability ops

def softmax(x, axis=-1):
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise ValueError("softmax: NaN in input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (x,), _bw, "softmax")


LOG_FLOOR = 1e-12


def weighted_cross_entropy(probs, target, weights, floor=LOG_FLOOR):
    """Class-weighted negative log likelihood ``-w[y] * log(p[y])``.

    ``probs`` is one distribution of shape (C,) with an integer ``target``, or
    a batch (N, C) with an integer array of targets; a batch is reduced by the
    plain mean over samples. Probabilities are floored at ``floor`` before the
    log.
    """
    probs = as_tensor(probs)
    weights = np.asarray(weights, dtype=probs.dtype)
    single = probs.ndim == 1
    if single:
        probs = reshape(probs, (1, -1))
    target = np.atleast_1d(np.asarray(target))
    if target.dtype.kind not in "iu":
        raise ValueError(f"weighted_cross_entropy: class index must be integer, got {target.dtype}")
    n_classes = probs.shape[1]
    if weights.shape != (n_classes,):
        raise ShapeError(f"weighted_cross_entropy: weights {weights.shape} for {n_classes} classes")
    if target.shape != (probs.shape[0],):
        raise ShapeError(f"weighted_cross_entropy: {target.shape} targets for {probs.shape[0]} rows")
    if target.min() < 0 or target.max() >= n_classes:
        raise ValueError(f"weighted_cross_entropy: class index out of range [0, {n_classes})")
    picked = log(clamp_min(gather(probs, target), floor))
    losses = mul(picked, -weights[target])
    return mean(losses)
