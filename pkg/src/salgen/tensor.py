"""Dense tensors with reverse-mode automatic differentiation.

numpy holds the values; every primitive here carries a hand-written adjoint.
Evaluation is eager: a node's forward value is computed exactly once, when the
node is created. Calling ``backward()`` on a scalar root propagates gradients
to every tracked leaf and then frees the graph (first-order only).

Precision is a process-global switch (float64 default). Gradient checks are
only trustworthy in float64; float32 is meant for training runs.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import as_strided

__all__ = [
    "Tensor", "ShapeError", "GradCheckError", "no_grad", "is_grad_enabled",
    "set_precision", "get_precision", "get_dtype",
    "add", "sub", "mul", "div", "neg", "exp", "log", "absolute", "power",
    "sigmoid", "leaky_relu", "relu", "gelu", "clip", "sqrt",
    "tsum", "tmean", "matmul", "softmax", "layer_norm",
    "conv2d", "avg_pool2d", "max_pool2d", "resize_bilinear", "upsample2x",
    "concat", "rot90", "roll", "reshape", "transpose", "expand_spatial",
    "detach", "finite_diff_check", "zero_grads",
]


class ShapeError(ValueError):
    """Operands fed to a primitive have inconsistent shapes."""


class GradCheckError(RuntimeError):
    """finite_diff_check hit a non-finite forward value."""


_DTYPES = {"f32": np.float32, "f64": np.float64}
_precision = "f64"
_grad_enabled = True


def set_precision(mode: str) -> None:
    """Select the global dtype for newly created tensors ('f32' or 'f64')."""
    global _precision
    if mode not in _DTYPES:
        raise ValueError(f"unknown precision {mode!r}, expected 'f32' or 'f64'")
    _precision = mode


def get_precision() -> str:
    return _precision


def get_dtype():
    return _DTYPES[_precision]


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad():
    """Suspend graph building; ops inside produce constant tensors."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense array plus an optional handle into the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        keep_dtype = isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64)
        arr = np.asarray(data)
        if not keep_dtype:
            arr = arr.astype(get_dtype())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    # -- basic introspection ------------------------------------------------

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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{grad})"

    # -- graph machinery ----------------------------------------------------

    def backward(self):
        """Reverse-mode sweep from a scalar root.

        Populates ``.grad`` on every tracked leaf, returns a map
        {leaf Tensor: gradient array}, and frees the traversed graph.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar root, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        leaf_map: dict[Tensor, np.ndarray] = {}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is not None:
                for parent, contrib in zip(node._parents, node._vjp(g)):
                    if contrib is None or not parent.requires_grad:
                        continue
                    prev = grads.get(id(parent))
                    grads[id(parent)] = contrib if prev is None else prev + contrib
            elif node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
                leaf_map[node] = node.grad
            # free graph as we go (no higher-order derivatives)
            node._parents = ()
            node._vjp = None
        return leaf_map

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operator sugar -----------------------------------------------------

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

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else get_dtype()
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents, vjp) -> Tensor:
    """Create a graph node; collapses to a constant when grads are off."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data)
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ---------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    data = a.data + b.data
    return _node(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    data = a.data - b.data
    return _node(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    data = a.data * b.data
    return _node(data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    data = a.data / b.data
    return _node(data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a):
    a = _as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def exp(a):
    a = _as_tensor(a)
    data = np.exp(a.data)
    return _node(data, (a,), lambda g: (g * data,))


def log(a):
    a = _as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def absolute(a):
    a = _as_tensor(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def power(a, exponent: float):
    a = _as_tensor(a)
    c = float(exponent)
    data = a.data ** c
    return _node(data, (a,), lambda g: (g * c * a.data ** (c - 1.0),))


def sqrt(a):
    return power(a, 0.5)


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _node(data, (a,), lambda g: (g * data * (1.0 - data),))


def leaky_relu(a, slope: float = 0.2):
    a = _as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)
    return _node(a.data * factor, (a,), lambda g: (g * factor,))


def relu(a):
    return leaky_relu(a, 0.0)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _node(data, (a,), vjp)


def clip(a, lo: float, hi: float):
    a = _as_tensor(a)
    data = np.clip(a.data, lo, hi)
    inside = ((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype)
    return _node(data, (a,), lambda g: (g * inside,))


# -- reductions, matmul ----------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _node(data, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    count = a.size if ax is None else int(np.prod([a.shape[i] for i in ax]))
    return tsum(a, axis, keepdims) / float(count)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError("matmul needs at least 1-d operands")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            ga = _unbroadcast(ga, a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = np.tensordot(a.data, g, axes=(tuple(range(a.ndim - 1)),
                                                   tuple(range(g.ndim - 1))))
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
                gb = _unbroadcast(gb, b.shape)
        return (ga, gb)

    return _node(data, (a, b), vjp)


def softmax(a, axis=-1):
    a = _as_tensor(a)
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _node(data, (a,), vjp)


def layer_norm(a, gamma, beta, eps: float = 1e-5):
    """Normalize over the last axis, then scale and shift."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    if gamma.shape != (a.shape[-1],) or beta.shape != (a.shape[-1],):
        raise ShapeError("layer_norm affine params must match the last axis")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gamma.data * xhat + beta.data

    def vjp(g):
        ggamma = gbeta = ga = None
        red = tuple(range(x.ndim - 1))
        if gamma.requires_grad:
            ggamma = (g * xhat).sum(axis=red)
        if beta.requires_grad:
            gbeta = g.sum(axis=red)
        if a.requires_grad:
            dxhat = g * gamma.data
            ga = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (ga, ggamma, gbeta)

    return _node(data, (a, gamma, beta), vjp)


# -- structured ops: convolution, pooling, resize ---------------------------


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0, dilation: int = 1):
    """2-D convolution on NCHW input with OIHW weights and explicit zero padding."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIHW weights, got {x.shape}, {w.shape}")
    n, c, h, wi = x.shape
    o, c2, kh, kw = w.shape
    if c != c2:
        raise ShapeError(f"conv2d channel mismatch: input {c} vs kernel {c2}")
    hp, wp = h + 2 * padding, wi + 2 * padding
    oh = (hp - (kh - 1) * dilation - 1) // stride + 1
    ow = (wp - (kw - 1) * dilation - 1) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}, kernel {w.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    s0, s1, s2, s3 = xp.strides
    win = as_strided(xp, (n, c, kh, kw, oh, ow),
                     (s0, s1, s2 * dilation, s3 * dilation, s2 * stride, s3 * stride))
    cols = np.ascontiguousarray(win.transpose(0, 4, 5, 1, 2, 3)).reshape(n * oh * ow, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    out = cols @ wmat.T
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (o,):
            raise ShapeError(f"conv2d bias must have shape ({o},), got {b.shape}")
        out += b.data
    data = out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)

    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, o)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (gm.T @ cols).reshape(o, c, kh, kw)
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i * dilation:i * dilation + oh * stride:stride,
                        j * dilation:j * dilation + ow * stride:stride] += dcols[:, :, i, j]
            gx = dxp[:, :, padding:padding + h, padding:padding + wi] if padding else dxp
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    return _node(data, parents, vjp)


def avg_pool2d(x, kernel: int, stride: int | None = None, padding: int = 0):
    """Average pooling via an integral image; zero padding counts as zeros."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d expects NCHW, got {x.shape}")
    stride = kernel if stride is None else stride
    n, c, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    oh = (hp - kernel) // stride + 1
    ow = (wp - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"avg_pool2d output would be empty for input {x.shape}, kernel {kernel}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    s = np.zeros((n, c, hp + 1, wp + 1), dtype=x.data.dtype)
    s[:, :, 1:, 1:] = xp.cumsum(axis=2).cumsum(axis=3)
    r0 = np.arange(oh) * stride
    c0 = np.arange(ow) * stride
    a_ = s[:, :, r0[:, None] + kernel, c0[None, :] + kernel]
    b_ = s[:, :, r0[:, None], c0[None, :] + kernel]
    c_ = s[:, :, r0[:, None] + kernel, c0[None, :]]
    d_ = s[:, :, r0[:, None], c0[None, :]]
    inv = 1.0 / (kernel * kernel)
    data = (a_ - b_ - c_ + d_) * inv

    def vjp(g):
        dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
        gs = g * inv
        for i in range(kernel):
            for j in range(kernel):
                dxp[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += gs
        return (dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp,)

    return _node(data, (x,), vjp)


def max_pool2d(x, kernel: int, stride: int | None = None):
    """Max pooling; ties resolve to the first element in row-major window order."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects NCHW, got {x.shape}")
    stride = kernel if stride is None else stride
    n, c, h, w = x.shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"max_pool2d output would be empty for input {x.shape}, kernel {kernel}")
    s0, s1, s2, s3 = x.data.strides
    win = as_strided(x.data, (n, c, oh, ow, kernel, kernel),
                     (s0, s1, s2 * stride, s3 * stride, s2, s3))
    flat = win.reshape(n, c, oh, ow, kernel * kernel)
    arg = flat.argmax(axis=-1)
    data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        dx = np.zeros_like(x.data)
        ki, kj = np.divmod(arg, kernel)
        ni, ci, oi, oj = np.indices(arg.shape)
        np.add.at(dx, (ni, ci, oi * stride + ki, oj * stride + kj), g)
        return (dx,)

    return _node(data, (x,), vjp)


_INTERP_CACHE: dict[tuple[int, int, str], np.ndarray] = {}


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    key = (n_in, n_out, np.dtype(dtype).name)
    m = _INTERP_CACHE.get(key)
    if m is None:
        m = np.zeros((n_out, n_in), dtype=dtype)
        scale = n_in / n_out
        for i in range(n_out):
            src = (i + 0.5) * scale - 0.5
            i0 = math.floor(src)
            t = src - i0
            m[i, min(max(i0, 0), n_in - 1)] += 1.0 - t
            m[i, min(max(i0 + 1, 0), n_in - 1)] += t
        _INTERP_CACHE[key] = m
    return m


def resize_bilinear(x, out_h: int, out_w: int):
    """Bilinear resize of NCHW maps (half-pixel centers, clamped edges)."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"resize_bilinear expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    mh = _interp_matrix(h, out_h, x.data.dtype)
    mw = _interp_matrix(w, out_w, x.data.dtype)
    data = mh @ x.data @ mw.T

    def vjp(g):
        return (mh.T @ g @ mw,)

    return _node(data, (x,), vjp)


def upsample2x(x):
    _, _, h, w = _as_tensor(x).shape
    return resize_bilinear(x, 2 * h, 2 * w)


# -- layout ops --------------------------------------------------------------


def concat(tensors, axis: int = 0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    axis = axis % tensors[0].ndim
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(o != b for i, (o, b) in enumerate(zip(other, base)) if i != axis):
            raise ShapeError(f"concat shapes incompatible along axis {axis}: "
                             f"{[t.shape for t in tensors]}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, tuple(tensors), vjp)


def rot90(x, k: int):
    """Rotate the last two axes by k*90 degrees counter-clockwise."""
    x = _as_tensor(x)
    k = k % 4
    data = np.ascontiguousarray(np.rot90(x.data, k, axes=(-2, -1)))
    return _node(data, (x,), lambda g: (np.ascontiguousarray(np.rot90(g, -k, axes=(-2, -1))),))


def roll(x, shift, axis):
    x = _as_tensor(x)
    data = np.roll(x.data, shift, axis=axis)
    if isinstance(shift, tuple):
        inv = tuple(-s for s in shift)
    else:
        inv = -shift
    return _node(data, (x,), lambda g: (np.roll(g, inv, axis=axis),))


def reshape(x, shape):
    x = _as_tensor(x)
    data = x.data.reshape(shape)
    return _node(data, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    x = _as_tensor(x)
    data = np.ascontiguousarray(x.data.transpose(axes))
    inv = np.argsort(axes)
    return _node(data, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def _getitem(x, index):
    data = x.data[index]
    if np.isscalar(data):
        data = np.asarray(data)

    def vjp(g):
        dx = np.zeros_like(x.data)
        dx[index] = g
        return (dx,)

    return _node(data, (x,), vjp)


def expand_spatial(h, height: int, width: int):
    """Broadcast a (B, K) vector to a (B, K, height, width) map."""
    h = _as_tensor(h)
    if h.ndim != 2:
        raise ShapeError(f"expand_spatial expects (B, K), got {h.shape}")
    data = np.broadcast_to(h.data[:, :, None, None], h.shape + (height, width)).copy()
    return _node(data, (h,), lambda g: (g.sum(axis=(2, 3)),))


def detach(x) -> Tensor:
    return _as_tensor(x).detach()


def zero_grads(params) -> None:
    """Clear gradients on an iterable or mapping of tensors."""
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


# -- gradient checking -------------------------------------------------------


def finite_diff_check(f, x: Tensor, eps: float = 1e-5, coords=None, rng=None) -> float:
    """Compare analytic gradients of scalar f(x) against central differences.

    Returns max over checked coordinates of
    ``|analytic - numeric| / (|analytic| + 1e-12)``. By default every
    coordinate of x is probed; pass ``coords`` (an int, with ``rng``) to probe
    a random subset when x is large.
    """
    base = np.array(x.data, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    if not np.all(np.isfinite(out.data)):
        raise GradCheckError("NaN or Inf in forward pass; check aborted")
    if out.size != 1:
        raise ShapeError("finite_diff_check requires a scalar-valued function")
    out.backward()
    analytic = leaf.grad.reshape(-1)

    flat_idx = np.arange(base.size)
    if coords is not None:
        if isinstance(coords, int):
            if rng is None:
                rng = np.random.default_rng(0)
            flat_idx = rng.choice(base.size, size=min(coords, base.size), replace=False)
        else:
            flat_idx = np.asarray(coords)

    worst = 0.0
    flat = base.reshape(-1)
    for i in flat_idx:
        orig = flat[i]
        flat[i] = orig + eps
        with no_grad():
            fp = f(Tensor(base.copy())).item()
        flat[i] = orig - eps
        with no_grad():
            fm = f(Tensor(base.copy())).item()
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise GradCheckError("NaN or Inf in forward pass; check aborted")
        numeric = (fp - fm) / (2.0 * eps)
        err = abs(analytic[i] - numeric) / (abs(analytic[i]) + 1e-12)
        worst = max(worst, err)
    return worst
