"""Reverse-mode automatic differentiation over numpy arrays.

Images use NHWC layout throughout. Every differentiable op records a closure
that maps the upstream gradient to one gradient per parent; ``Tensor.backward``
replays them in reverse topological order.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, target generation)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- array-like surface ------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- graph -------------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires grad."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        grads = _propagate(self)
        for node in _topo_order(self):
            if node._backward is None and node.requires_grad:
                g = grads.get(id(node))
                if g is None:
                    continue
                node.grad = g if node.grad is None else node.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operators ---------------------------------------------------------
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

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _propagate(root: Tensor) -> dict[int, np.ndarray]:
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(_topo_order(root)):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return grads


def grad(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. ``params``; unreachable params get zeros."""
    if loss.data.size != 1:
        raise ValueError(f"grad() needs a scalar loss, got shape {loss.shape}")
    grads = _propagate(loss)
    return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


# -- helpers -------------------------------------------------------------------

def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None and np.ndim(x) == 0 else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Iterable[Tensor], backward: Callable) -> Tensor:
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return a, b


# -- elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _binary(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def power(a: Tensor, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data ** exponent, (a,),
                 lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid_np(z: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = sigmoid_np(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy computed from logits (targets are constants)."""
    logits = as_tensor(logits)
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=logits.dtype)
    z = logits.data
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return _make(loss, (logits,), lambda g: (g * (sigmoid_np(z) - y),))


# -- shape / reductions ------------------------------------------------------------

def reshape(a: Tensor, shape: tuple) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a: Tensor, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward)


def _expand(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))
    return _make(out, (a,), lambda g: (_expand(g, a.shape, axis, keepdims).copy(),))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.data.size / max(out.size, 1)
    return _make(out, (a,), lambda g: (_expand(g, a.shape, axis, keepdims) / count,))


def _extreme(a: Tensor, axis, keepdims: bool, fn) -> Tensor:
    a = as_tensor(a)
    out_k = fn(a.data, axis=axis, keepdims=True)
    mask = (a.data == out_k)
    # ties share the gradient evenly
    share = mask / mask.sum(axis=axis, keepdims=True)
    out = out_k if keepdims else np.asarray(fn(a.data, axis=axis, keepdims=False))
    return _make(out, (a,), lambda g: (_expand(g, a.shape, axis, keepdims) * share,))


def amax(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return _extreme(a, axis, keepdims, np.max)


def amin(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return _extreme(a, axis, keepdims, np.min)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _binary(a, b)
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# -- convolution & pooling -----------------------------------------------------------

def conv_output_size(n: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Return (output size, pad before, pad after) for one spatial axis.

    'same' yields ceil(n / stride); 'valid' yields floor((n - k) / stride) + 1.
    """
    if padding == "same":
        out = -(-n // stride)
        total = max((out - 1) * stride + k - n, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        if n < k:
            raise ValueError(f"valid padding needs size >= kernel, got {n} < {k}")
        return (n - k) // stride + 1, 0, 0
    raise ValueError(f"unknown padding {padding!r}")


def _im2col(xp: np.ndarray, kh: int, kw: int, s: int, ho: int, wo: int) -> np.ndarray:
    cols = [xp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]
            for i in range(kh) for j in range(kw)]
    return np.concatenate(cols, axis=-1)


def _col2im(dcols: np.ndarray, padded_shape: tuple, kh: int, kw: int, s: int) -> np.ndarray:
    n, ho, wo, _ = dcols.shape
    c = padded_shape[-1]
    dcols = dcols.reshape(n, ho, wo, kh * kw, c)
    out = np.zeros(padded_shape, dtype=dcols.dtype)
    for t in range(kh * kw):
        i, j = divmod(t, kw)
        out[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dcols[:, :, :, t, :]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2-D cross-correlation. x: (N, H, W, C); w: (kh, kw, C, O); b: (O,)."""
    x, w = as_tensor(x), as_tensor(w)
    n, h, wd, c = x.shape
    kh, kw, cw, o = w.shape
    if c != cw:
        raise ValueError(f"conv2d: input has {c} channels but kernel expects {cw}")
    ho, pt, pb = conv_output_size(h, kh, stride, padding)
    wo, pl, pr = conv_output_size(wd, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = _im2col(xp, kh, kw, stride, ho, wo).reshape(-1, kh * kw * c)
    wmat = w.data.reshape(-1, o)
    out = (cols @ wmat).reshape(n, ho, wo, o)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
        parents = (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, o)
        dw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, -1)
            dxp = _col2im(dcols, xp.shape, kh, kw, stride)
            dx = dxp[:, pt:pt + h, pl:pl + wd, :]
        if b is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    return _make(out, parents, backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
                     padding: str = "same") -> Tensor:
    """Transposed convolution: the input-gradient of ``conv2d`` run forwards.

    x: (N, h, w, Cin); w: (kh, kw, Cout, Cin). Output spatial size is
    h * stride for 'same' and (h - 1) * stride + k for 'valid'.
    """
    x, w = as_tensor(x), as_tensor(w)
    n, h, wd, cin = x.shape
    kh, kw, cout, cw = w.shape
    if cin != cw:
        raise ValueError(f"conv_transpose2d: input has {cin} channels but kernel expects {cw}")
    if padding == "same":
        ho, wo = h * stride, wd * stride
    else:
        ho, wo = (h - 1) * stride + kh, (wd - 1) * stride + kw
    _, pt, pb = conv_output_size(ho, kh, stride, padding)
    _, pl, pr = conv_output_size(wo, kw, stride, padding)
    padded = (n, ho + pt + pb, wo + pl + pr, cout)
    wmat = w.data.reshape(-1, cin)
    x2 = x.data.reshape(-1, cin)
    dcols = (x2 @ wmat.T).reshape(n, h, wd, -1)
    out = _col2im(dcols, padded, kh, kw, stride)[:, pt:pt + ho, pl:pl + wo, :]
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
        parents = (x, w, b)

    def backward(g):
        gp = np.pad(g, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        cols = _im2col(gp, kh, kw, stride, h, wd).reshape(-1, kh * kw * cout)
        dx = (cols @ wmat).reshape(x.shape) if x.requires_grad else None
        dw = (cols.T @ x2).reshape(w.shape) if w.requires_grad else None
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 1, 2))

    return _make(out, parents, backward)


def _pool_geometry(x: np.ndarray, k: int, s: int) -> tuple[int, int]:
    _, h, wd, _ = x.shape
    if h < k or wd < k:
        raise ValueError(f"pooling window {k} larger than input {h}x{wd}")
    return (h - k) // s + 1, (wd - k) // s + 1


def max_pool2d(x: Tensor, size: int = 2, stride: int | None = None) -> Tensor:
    x = as_tensor(x)
    s = stride or size
    ho, wo = _pool_geometry(x.data, size, s)
    taps = [x.data[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]
            for i in range(size) for j in range(size)]
    stacked = np.stack(taps, axis=0)
    idx = stacked.argmax(axis=0)
    out = np.take_along_axis(stacked, idx[None], axis=0)[0]

    def backward(g):
        dx = np.zeros_like(x.data)
        for t in range(size * size):
            i, j = divmod(t, size)
            dx[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += g * (idx == t)
        return (dx,)

    return _make(out, (x,), backward)


def avg_pool2d(x: Tensor, size: int = 2, stride: int | None = None) -> Tensor:
    """Uniform window mean; stride 1 gives the sliding-window mean used by SSIM."""
    x = as_tensor(x)
    s = stride or size
    ho, wo = _pool_geometry(x.data, size, s)
    scale = 1.0 / (size * size)
    if s == 1 and size > 2:
        out = _box_sum(x.data, size) * scale
    else:
        out = np.zeros((x.shape[0], ho, wo, x.shape[3]), dtype=x.dtype)
        for i in range(size):
            for j in range(size):
                out += x.data[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]
        out *= scale

    def backward(g):
        gs = (g * scale).astype(x.dtype, copy=False)
        if s == 1 and size > 2:
            gp = np.pad(gs, ((0, 0), (size - 1, size - 1), (size - 1, size - 1), (0, 0)))
            return (_box_sum(gp, size),)
        dx = np.zeros_like(x.data)
        for i in range(size):
            for j in range(size):
                dx[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += gs
        return (dx,)

    return _make(out.astype(x.dtype, copy=False), (x,), backward)


def _box_sum(x: np.ndarray, size: int) -> np.ndarray:
    # separable running sums; accumulate in float64 for exactness
    c = np.cumsum(x, axis=1, dtype=np.float64)
    c = np.concatenate([np.zeros_like(c[:, :1]), c], axis=1)
    rows = c[:, size:] - c[:, :-size]
    c = np.cumsum(rows, axis=2)
    c = np.concatenate([np.zeros_like(c[:, :, :1]), c], axis=2)
    return (c[:, :, size:] - c[:, :, :-size]).astype(x.dtype, copy=False)


def softmax_temperature(logits, temperature: float) -> np.ndarray:
    """Softmax of ``logits / temperature``; higher temperature flattens the output."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(p: np.ndarray, axis: int = -1) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=axis)


def binary_entropy(p) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-12, 1 - 1e-12)
    return -(p * np.log(p) + (1 - p) * np.log(1 - p))


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)
