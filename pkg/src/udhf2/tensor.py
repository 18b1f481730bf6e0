"""numpy-backed tensors with reverse-mode autodiff on a recording tape.

Operations executed while a tape is active (see `record`) append nodes in
execution order; `backward` replays the tape strictly in reverse, which makes
gradient accumulation order — and therefore float rounding — reproducible
run to run.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError, UsageError

_DEFAULT_DTYPE = np.float32


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype):
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ParameterError(f"unsupported default dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


class default_dtype_scope:
    """Temporarily switch the dtype used for new parameters/constants."""

    def __init__(self, dtype):
        self.dtype = dtype

    def __enter__(self):
        self.saved = _DEFAULT_DTYPE
        set_default_dtype(self.dtype)
        return self

    def __exit__(self, *exc):
        set_default_dtype(self.saved)
        return False


class Tape:
    """Execution-ordered record of differentiable operations."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)


_TAPE_STACK: list[Tape] = []


class record:
    """Context manager that activates a fresh tape for gradient recording."""

    def __init__(self, tape=None):
        self.tape = tape if tape is not None else Tape()

    def __enter__(self):
        _TAPE_STACK.append(self.tape)
        return self.tape

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class _Node:
    __slots__ = ("out", "inputs", "grad_fns")

    def __init__(self, out, inputs, grad_fns):
        self.out = out
        self.inputs = inputs
        self.grad_fns = grad_fns


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    # Make numpy defer mixed expressions (ndarray op Tensor) to our reflected
    # operators instead of coercing the Tensor into an object array.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind in "iub":
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    # ---- introspection -------------------------------------------------
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

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    def item(self):
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    # ---- arithmetic ----------------------------------------------------
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # ---- shape & reduction helpers ------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """A leaf tensor that optimizers update; always requires grad."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


def as_tensor(x, like=None):
    """Wrap `x` as a constant Tensor, matching `like`'s dtype when given."""
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if isinstance(like, Tensor) else _DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, inputs, grad_fns):
    """Create an op output and record it on the active tape if needed."""
    rg = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=rg)
    if rg:
        tape = active_tape()
        if tape is not None:
            tape.nodes.append(_Node(out, tuple(inputs), tuple(grad_fns)))
            out._tape = tape
    return out


def backward(loss):
    """Accumulate d(loss)/d(t) into `.grad` of every tensor on loss's tape."""
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if not loss.requires_grad or loss._tape is None:
        raise UsageError("backward on a tensor with no recorded operations (detached or constant)")
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    tape = loss._tape
    grads = {id(loss): np.ones_like(loss.data)}
    holders = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.out))
        if g is None:
            continue
        for inp, gfn in zip(node.inputs, node.grad_fns):
            if not inp.requires_grad or gfn is None:
                continue
            contrib = gfn(g)
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
                holders[key] = inp
    for key, t in holders.items():
        g = np.asarray(grads[key], dtype=t.data.dtype)
        t.grad = g if t.grad is None else t.grad + g


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def _sum_to_shape(g, shape):
    """Reduce a broadcast gradient back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---- elementwise ------------------------------------------------------


def add(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    return _make(a.data + b.data, (a, b),
                 (lambda g: _sum_to_shape(g, a.data.shape),
                  lambda g: _sum_to_shape(g, b.data.shape)))


def sub(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    return _make(a.data - b.data, (a, b),
                 (lambda g: _sum_to_shape(g, a.data.shape),
                  lambda g: _sum_to_shape(-g, b.data.shape)))


def mul(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    return _make(a.data * b.data, (a, b),
                 (lambda g: _sum_to_shape(g * b.data, a.data.shape),
                  lambda g: _sum_to_shape(g * a.data, b.data.shape)))


def div(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    return _make(a.data / b.data, (a, b),
                 (lambda g: _sum_to_shape(g / b.data, a.data.shape),
                  lambda g: _sum_to_shape(-g * a.data / (b.data * b.data), b.data.shape)))


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), (lambda g: -g,))


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    return _make(a.data ** p, (a,), (lambda g: g * p * a.data ** (p - 1.0),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), (lambda g: g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), (lambda g: g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), (lambda g: g * 0.5 / out,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), (lambda g: g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), (lambda g: g * out * (1.0 - out),))


def absolute(a):
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), (lambda g: g * np.sign(a.data),))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes only through the interior."""
    a = as_tensor(a)
    mask = (a.data > lo) & (a.data < hi)
    return _make(np.clip(a.data, lo, hi), (a,), (lambda g: g * mask,))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), (lambda g: g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    a = as_tensor(a)
    x = a.data
    u = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(u)

    def grad(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)

    return _make(0.5 * x * (1.0 + t), (a,), (grad,))


# ---- shape ------------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), (lambda g: g.reshape(a.data.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), (lambda g: g.transpose(inv),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def make_grad(i):
        def grad(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(sl)]
        return grad

    return _make(out, tuple(tensors), tuple(make_grad(i) for i in range(len(tensors))))


def getitem(a, idx):
    """Slicing/indexing; gradient scatters back into a zero tensor."""
    a = as_tensor(a)
    out = a.data[idx]
    items = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(it, (int, np.integer, slice)) or it is Ellipsis
                for it in items)

    def grad(g):
        dx = np.zeros_like(a.data)
        if basic:
            dx[idx] += g
        else:
            np.add.at(dx, idx, g)
        return dx

    return _make(out, (a,), (grad,))


def pad2d(a, pad):
    """Zero-pad the two trailing axes by `pad` on every side."""
    a = as_tensor(a)
    if pad == 0:
        return a
    width = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]
    out = np.pad(a.data, width)

    def grad(g):
        sl = (Ellipsis, slice(pad, g.shape[-2] - pad), slice(pad, g.shape[-1] - pad))
        return g[sl]

    return _make(out, (a,), (grad,))


# ---- reductions -------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad(g):
        g2 = g
        if axis is not None and not keepdims:
            g2 = np.expand_dims(g, axis)
        return np.broadcast_to(g2, a.data.shape).copy()

    return _make(out, (a,), (grad,))


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]

    def grad(g):
        g2 = g
        if axis is not None and not keepdims:
            g2 = np.expand_dims(g, axis)
        return np.broadcast_to(g2, a.data.shape) / n

    return _make(out, (a,), (grad,))


# ---- linear algebra ---------------------------------------------------


def matmul(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner axes differ: {a.data.shape} @ {b.data.shape}")

    def grad_a(g):
        return _sum_to_shape(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)

    def grad_b(g):
        return _sum_to_shape(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)

    return _make(np.matmul(a.data, b.data), (a, b), (grad_a, grad_b))


def softmax(a, axis=-1):
    """Numerically stable softmax along `axis`."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad(g):
        return out * (g - (g * out).sum(axis=axis, keepdims=True))

    return _make(out, (a,), (grad,))


def layer_norm(a, gain, bias, axis=-1, eps=1e-5):
    """Normalize along one axis to zero mean/unit variance, then scale and shift.

    `gain` and `bias` have the length of the normalized axis.
    """
    a = as_tensor(a)
    gain = as_tensor(gain, like=a)
    bias = as_tensor(bias, like=a)
    n = a.data.shape[axis]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise DimensionError(
            f"layer_norm affine parameters must have shape ({n},), got {gain.data.shape} / {bias.data.shape}")
    shape = [1] * a.ndim
    shape[axis] = n
    gv = gain.data.reshape(shape)
    bv = bias.data.reshape(shape)
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gv * xhat + bv

    reduce_axes = tuple(i for i in range(a.ndim) if i != (axis % a.ndim))

    def grad_a(g):
        gg = g * gv
        return inv * (gg - gg.mean(axis=axis, keepdims=True)
                      - xhat * (gg * xhat).mean(axis=axis, keepdims=True))

    def grad_gain(g):
        return (g * xhat).sum(axis=reduce_axes)

    def grad_bias(g):
        return g.sum(axis=reduce_axes)

    return _make(out, (a, gain, bias), (grad_a, grad_gain, grad_bias))


def batch_norm(a, gain, bias, eps=1e-5):
    """Normalize NCHW input per channel over (batch, H, W) with current-batch stats."""
    a = as_tensor(a)
    gain = as_tensor(gain, like=a)
    bias = as_tensor(bias, like=a)
    if a.ndim != 4:
        raise DimensionError(f"batch_norm expects NCHW input, got {a.data.shape}")
    c = a.data.shape[1]
    if gain.data.shape != (c,) or bias.data.shape != (c,):
        raise DimensionError(
            f"batch_norm affine parameters must have shape ({c},), got {gain.data.shape} / {bias.data.shape}")
    axes = (0, 2, 3)
    m = a.data.shape[0] * a.data.shape[2] * a.data.shape[3]
    gv = gain.data.reshape(1, c, 1, 1)
    bv = bias.data.reshape(1, c, 1, 1)
    mu = a.data.mean(axis=axes, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gv * xhat + bv

    def grad_a(g):
        gg = g * gv
        return inv * (gg - gg.mean(axis=axes, keepdims=True)
                      - xhat * (gg * xhat).mean(axis=axes, keepdims=True))

    def grad_gain(g):
        return (g * xhat).sum(axis=axes)

    def grad_bias(g):
        return g.sum(axis=axes)

    return _make(out, (a, gain, bias), (grad_a, grad_gain, grad_bias))


# ---- convolution ------------------------------------------------------


def conv2d(x, w, bias=None, stride=1, padding=0):
    """Cross-correlate NCHW input with OIHW weights."""
    x = as_tensor(x)
    w = as_tensor(w, like=x)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW x and OIHW w, got {x.data.shape} and {w.data.shape}")
    n, c, h, wd = x.data.shape
    o, ci, kh, kw = w.data.shape
    if ci != c:
        raise DimensionError(f"conv2d channel mismatch on axis 1: input has {c}, kernel expects {ci}")
    s, p = int(stride), int(padding)
    if s < 1:
        raise ParameterError(f"conv2d stride must be >= 1, got {stride}")
    hp, wp = h + 2 * p, wd + 2 * p
    if hp < kh or wp < kw:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // s + 1
    wo = (wp - kw) // s + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    out = (cols @ wmat.T).transpose(0, 2, 1).reshape(n, o, ho, wo)
    if bias is not None:
        bias = as_tensor(bias, like=x)
        if bias.data.shape != (o,):
            raise DimensionError(f"conv2d bias must have shape ({o},), got {bias.data.shape}")
        out = out + bias.data.reshape(1, o, 1, 1)

    def grad_x(g):
        gmat = g.reshape(n, o, ho * wo).transpose(0, 2, 1)
        dcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros((n, c, hp, wp), dtype=x.data.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + ho * s:s, j:j + wo * s:s] += dcols[:, :, :, :, i, j]
        return dxp[:, :, p:p + h, p:p + wd] if p else dxp

    def grad_w(g):
        gmat = g.reshape(n, o, ho * wo)
        dw = np.einsum("nop,npk->ok", gmat, cols, optimize=True)
        return dw.reshape(o, c, kh, kw)

    inputs = [x, w]
    grads = [grad_x, grad_w]
    if bias is not None:
        inputs.append(bias)
        grads.append(lambda g: g.sum(axis=(0, 2, 3)))
    return _make(out, tuple(inputs), tuple(grads))


# ---- resampling -------------------------------------------------------


def _resize_axis_weights(n_in, n_out, dtype):
    """Source indices and blend weights for 1-D bilinear resize (half-pixel centers)."""
    coords = (np.arange(n_out, dtype=dtype) + 0.5) * (n_in / n_out) - 0.5
    coords = np.clip(coords, 0.0, n_in - 1.0)
    i0 = np.floor(coords).astype(np.int64)
    i0 = np.minimum(i0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = (coords - i0).astype(dtype)
    return i0, i1, frac


_RESIZE_MATRICES = {}


def _resize_matrix(n_in, n_out, dtype):
    """Dense (n_out, n_in) interpolation matrix for one axis, cached."""
    key = (n_in, n_out, np.dtype(dtype).str)
    m = _RESIZE_MATRICES.get(key)
    if m is None:
        i0, i1, frac = _resize_axis_weights(n_in, n_out, np.float64)
        m = np.zeros((n_out, n_in))
        rows = np.arange(n_out)
        np.add.at(m, (rows, i0), 1.0 - frac)
        np.add.at(m, (rows, i1), frac)
        m = m.astype(dtype)
        _RESIZE_MATRICES[key] = m
    return m


def bilinear_resize(x, scale):
    """Resize the two trailing axes of NCHW input by a positive real factor."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"bilinear_resize expects NCHW input, got {x.data.shape}")
    if scale <= 0:
        raise ParameterError(f"bilinear_resize scale must be positive, got {scale}")
    n, c, h, w = x.data.shape
    ho = max(1, int(math.floor(h * scale + 0.5)))
    wo = max(1, int(math.floor(w * scale + 0.5)))
    dt = x.data.dtype
    wy = _resize_matrix(h, ho, dt)
    wx = _resize_matrix(w, wo, dt)
    out = np.matmul(np.matmul(wy, x.data), wx.T)

    def grad(g):
        return np.matmul(np.matmul(wy.T, g), wx)

    return _make(out, (x,), (grad,))


def grid_sample(x, coords):
    """Sample NCHW input at fractional (row, col) positions with zero padding.

    coords: (N, P, 2) pixel-unit positions; out-of-bounds corners contribute 0.
    Returns (N, C, P). Differentiable in both the source and the positions.
    """
    x = as_tensor(x)
    coords = as_tensor(coords, like=x)
    if x.ndim != 4 or coords.ndim != 3 or coords.data.shape[-1] != 2:
        raise DimensionError(
            f"grid_sample expects (N,C,H,W) source and (N,P,2) coords, got {x.data.shape} and {coords.data.shape}")
    n, c, h, w = x.data.shape
    if coords.data.shape[0] != n:
        raise DimensionError(
            f"grid_sample batch mismatch on axis 0: {n} vs {coords.data.shape[0]}")
    p = coords.data.shape[1]
    cy = coords.data[:, :, 0]
    cx = coords.data[:, :, 1]
    y0 = np.floor(cy).astype(np.int64)
    x0 = np.floor(cx).astype(np.int64)
    fy = (cy - y0).astype(x.data.dtype)
    fx = (cx - x0).astype(x.data.dtype)
    src_flat = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    nbase = (np.arange(n, dtype=np.int64) * (h * w))[:, None]

    corner_vals = []
    corner_masks = []
    corner_flat = []
    for dy in (0, 1):
        for dx_ in (0, 1):
            yi = y0 + dy
            xi = x0 + dx_
            m = ((yi >= 0) & (yi < h) & (xi >= 0) & (xi < w))
            yc = np.clip(yi, 0, h - 1)
            xc = np.clip(xi, 0, w - 1)
            flat = nbase + yc * w + xc
            v = np.take(src_flat, flat.reshape(-1), axis=0).reshape(n, p, c)
            v = v * m[:, :, None]
            corner_vals.append(v)
            corner_masks.append(m.astype(x.data.dtype))
            corner_flat.append(flat)
    v00, v01, v10, v11 = corner_vals
    wy0, wy1 = (1 - fy)[:, :, None], fy[:, :, None]
    wx0, wx1 = (1 - fx)[:, :, None], fx[:, :, None]
    weights = (wy0 * wx0, wy0 * wx1, wy1 * wx0, wy1 * wx1)
    out_npc = v00 * weights[0] + v01 * weights[1] + v10 * weights[2] + v11 * weights[3]
    out = out_npc.transpose(0, 2, 1)

    def grad_x(g):
        gp = g.transpose(0, 2, 1)  # (N, P, C)
        idx_all = np.concatenate([f.reshape(-1) for f in corner_flat])
        contrib = np.concatenate(
            [(gp * (wgt * m[:, :, None])).reshape(n * p, c)
             for wgt, m in zip(weights, corner_masks)])
        dflat = np.empty((n * h * w, c), dtype=g.dtype)
        for ch in range(c):
            dflat[:, ch] = np.bincount(idx_all, weights=contrib[:, ch], minlength=n * h * w)
        return dflat.reshape(n, h, w, c).transpose(0, 3, 1, 2)

    def grad_coords(g):
        gp = g.transpose(0, 2, 1)
        dy_val = ((v10 - v00) * wx0 + (v11 - v01) * wx1)
        dx_val = ((v01 - v00) * wy0 + (v11 - v10) * wy1)
        dcy = (gp * dy_val).sum(axis=2)
        dcx = (gp * dx_val).sum(axis=2)
        return np.stack([dcy, dcx], axis=2)

    return _make(out, (x, coords), (grad_x, grad_coords))


# ---- optimizer --------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay; update order follows the parameter list."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        if len({id(p) for p in self.params}) != len(self.params):
            raise ParameterError("duplicate parameter passed to AdamW")
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            g = g.astype(p.data.dtype, copy=False)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            mhat = self.m[i] / bc1
            vhat = self.v[i] / bc2
            p.data = p.data - self.lr * (mhat / (np.sqrt(vhat) + self.eps)
                                         + self.weight_decay * p.data)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
