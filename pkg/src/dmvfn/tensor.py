"""Dense float tensors with reverse-mode automatic differentiation.

Everything is numpy-backed. A :class:`Tensor` wraps an ndarray plus an
optional position on a gradient tape; ops never mutate their inputs and
return fresh tensors, so values can be handed around freely. The tape is
built implicitly while grad mode is on (see :class:`no_grad`) and consumed
by a single ``backward()`` call on a scalar root.

Images and feature maps are stored batch x channel x height x width.
Default dtype is float32; float64 inputs are preserved, which is what the
finite-difference test oracles rely on.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Param",
    "ShapeError",
    "no_grad",
    "from_op",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "add_scalar",
    "mul_scalar",
    "minimum_scalar",
    "abs_",
    "sigmoid",
    "prelu",
    "concat_channels",
    "narrow",
    "reshape",
    "sum_axis",
    "sum_all",
    "mean_all",
    "global_avg_pool",
    "linear",
    "conv2d",
    "transposed_conv2d",
    "bilinear_resize",
    "pad_replicate",
    "ste_bernoulli",
    "kaiming_normal",
    "zeros",
]


class ShapeError(ValueError):
    """Operand dimensions are inconsistent for the requested operation."""


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that suspends tape construction."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


def _as_array(data, dtype):
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    arr = np.asarray(data)
    if arr.dtype == np.float64:
        return arr
    return arr.astype(np.float32) if arr.dtype != np.float32 else arr


class Tensor:
    """N-d float array participating in a reverse-mode gradient tape.

    ``requires_grad`` marks leaves that should receive a ``.grad`` buffer;
    op outputs inherit it from their parents. Interior tape nodes carry the
    op name, parent references and a backward rule mapping the output
    gradient to per-parent gradients. A node's backward rule may be defined
    independently of its forward map, which is what straight-through
    estimators use.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward_fn", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents = ()
        self._backward_fn = None
        self._backward_done = False

    # -- bookkeeping ------------------------------------------------------

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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- backward ---------------------------------------------------------

    def backward(self) -> None:
        """Populate ``.grad`` on every requires-grad ancestor of this scalar.

        Traverses the tape in reverse topological order exactly once;
        fan-out contributions accumulate by summation. A tape can only be
        consumed once.
        """
        if self.data.size != 1:
            raise ValueError(f"backward root must be a scalar, got shape {self.data.shape}")
        if self._backward_done:
            raise RuntimeError("tape already consumed; rebuild the graph before calling backward again")

        topo = []
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
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            fn = node._backward_fn
            if fn is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, fn(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=parent.data.dtype, copy=True)
                else:
                    parent.grad += g
            node._backward_fn = None
        self._backward_done = True


def from_op(data, parents, op: str, backward_fn) -> Tensor:
    """Wrap an op result, wiring it into the tape when gradients are live.

    ``backward_fn(gy)`` must return one gradient array (or None) per parent.
    """
    requires = _GRAD_ENABLED[0] and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, dtype=data.dtype)
    if requires:
        out.op = op
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


class Param:
    """Named trainable tensor plus AdamW moment buffers and step counter."""

    __slots__ = ("name", "tensor", "m", "v", "step")

    def __init__(self, name: str, tensor: Tensor):
        tensor.requires_grad = True
        self.name = name
        self.tensor = tensor
        self.m = np.zeros_like(tensor.data)
        self.v = np.zeros_like(tensor.data)
        self.step = 0

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.tensor.shape})"


# -- initializers ----------------------------------------------------------


def kaiming_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    """Fan-in scaled normal init, std = sqrt(2 / fan_in)."""
    std = np.sqrt(2.0 / fan_in)
    return Tensor((rng.standard_normal(shape) * std).astype(dtype))


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


# -- broadcasting helpers ---------------------------------------------------


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_same_dtype(*ts):
    dt = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != dt:
            raise ShapeError(f"mixed dtypes in op: {dt} vs {t.data.dtype}")
    return dt


# -- elementwise ops --------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out = a.data + b.data

    def backward(gy):
        return _unbroadcast(gy, a.shape), _unbroadcast(gy, b.shape)

    return from_op(out, (a, b), "add", backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out = a.data - b.data

    def backward(gy):
        return _unbroadcast(gy, a.shape), _unbroadcast(-gy, b.shape)

    return from_op(out, (a, b), "sub", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def backward(gy):
        return _unbroadcast(gy * bd, a.shape), _unbroadcast(gy * ad, b.shape)

    return from_op(out, (a, b), "mul", backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out = a.data / b.data
    ad, bd = a.data, b.data

    def backward(gy):
        ga = _unbroadcast(gy / bd, a.shape)
        gb = _unbroadcast(-gy * ad / (bd * bd), b.shape)
        return ga, gb

    return from_op(out, (a, b), "div", backward)


def neg(a: Tensor) -> Tensor:
    return from_op(-a.data, (a,), "neg", lambda gy: (-gy,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = a.data + a.data.dtype.type(c)
    return from_op(out, (a,), "add_scalar", lambda gy: (gy,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    cc = a.data.dtype.type(c)
    out = a.data * cc
    return from_op(out, (a,), "mul_scalar", lambda gy: (gy * cc,))


def minimum_scalar(a: Tensor, c: float) -> Tensor:
    """Elementwise min(a, c); subgradient 0 on the clamped side."""
    out = np.minimum(a.data, a.data.dtype.type(c))
    mask = (a.data < c).astype(a.data.dtype)
    return from_op(out, (a,), "minimum_scalar", lambda gy: (gy * mask,))


def abs_(a: Tensor) -> Tensor:
    out = np.abs(a.data)
    s = np.sign(a.data)
    return from_op(out, (a,), "abs", lambda gy: (gy * s,))


def _sigmoid_impl(x: np.ndarray) -> np.ndarray:
    # two-sided form avoids exp overflow for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_impl(a.data)

    def backward(gy):
        return (gy * out * (1.0 - out),)

    return from_op(out, (a,), "sigmoid", backward)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """PReLU with a learnable per-channel negative slope, input NCHW."""
    if x.ndim != 4 or slope.ndim != 1 or slope.shape[0] != x.shape[1]:
        raise ShapeError(f"prelu: input {x.shape} needs per-channel slope, got {slope.shape}")
    _check_same_dtype(x, slope)
    a4 = slope.data.reshape(1, -1, 1, 1)
    negpart = np.minimum(x.data, 0)
    out = np.maximum(x.data, 0) + a4 * negpart
    pos = x.data > 0

    def backward(gy):
        gx = gy * np.where(pos, x.data.dtype.type(1), a4)
        ga = (gy * negpart).sum(axis=(0, 2, 3))
        return gx, ga

    return from_op(out, (x, slope), "prelu", backward)


# -- shape ops --------------------------------------------------------------


def concat_channels(tensors) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_channels: empty input list")
    _check_same_dtype(*tensors)
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != 4 or t.shape[0] != base[0] or t.shape[2:] != base[2:]:
            raise ShapeError(f"concat_channels: incompatible shapes {base} vs {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=1)
    sizes = [t.shape[1] for t in tensors]
    edges = np.cumsum([0] + sizes)

    def backward(gy):
        return tuple(gy[:, edges[i]:edges[i + 1]] for i in range(len(sizes)))

    return from_op(out, tuple(tensors), "concat_channels", backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError(f"narrow: [{start}:{start + length}] out of range for axis {axis} of {x.shape}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = np.ascontiguousarray(x.data[idx])

    def backward(gy):
        gx = np.zeros_like(x.data)
        gx[idx] = gy
        return (gx,)

    return from_op(out, (x,), "narrow", backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    orig = x.data.shape
    return from_op(out, (x,), "reshape", lambda gy: (gy.reshape(orig),))


def sum_axis(x: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.data.shape

    def backward(gy):
        g = gy if keepdims else np.expand_dims(gy, axis)
        return (np.broadcast_to(g, shape),)

    return from_op(out, (x,), "sum_axis", backward)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)
    shape = x.data.shape
    return from_op(out, (x,), "sum_all", lambda gy: (np.full(shape, gy, dtype=gy.dtype),))


def mean_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)
    shape = x.data.shape
    n = x.data.size
    return from_op(out, (x,), "mean_all", lambda gy: (np.full(shape, gy / n, dtype=gy.dtype),))


# -- pooling / linear --------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes of an NCHW tensor, giving (N, C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected NCHW input, got {x.shape}")
    out = x.data.mean(axis=(2, 3))
    n, c, h, w = x.shape

    def backward(gy):
        return (np.broadcast_to(gy[:, :, None, None] / (h * w), (n, c, h, w)),)

    return from_op(out, (x,), "global_avg_pool", backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map of per-sample vectors: (N, D) @ (D, O) + (O,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not match out dim {w.shape[1]}")
    _check_same_dtype(x, w, b)
    out = x.data @ w.data + b.data

    def backward(gy):
        return gy @ w.data.T, x.data.T @ gy, gy.sum(axis=0)

    return from_op(out, (x, w, b), "linear", backward)


# -- convolution kernels ------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv geometry produces empty output: input {x.shape}, kernel {kh}x{kw}, stride {stride}, pad {pad}")
    if pad:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = np.ascontiguousarray(x)
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    # (C*kh*kw, N*ho*wo) matrix; the transpose forces the copy
    mat = view.transpose(1, 2, 3, 0, 4, 5).reshape(c * kh * kw, n * ho * wo)
    return mat, ho, wo


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    cout, cin, kh, kw = w.shape
    n = x.shape[0]
    mat, ho, wo = _im2col(x, kh, kw, stride, pad)
    out = (w.reshape(cout, cin * kh * kw) @ mat).reshape(cout, n, ho, wo)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def _conv_grad_weight(x: np.ndarray, gy: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    cout = gy.shape[1]
    cin = x.shape[1]
    mat, ho, wo = _im2col(x, kh, kw, stride, pad)
    gmat = gy.transpose(1, 0, 2, 3).reshape(cout, -1)
    return (gmat @ mat.T).reshape(cout, cin, kh, kw)


def _conv_grad_input(gy: np.ndarray, w: np.ndarray, stride: int, pad: int, h: int, w_: int) -> np.ndarray:
    cout, cin, kh, kw = w.shape
    n, _, ho, wo = gy.shape
    gmat = gy.transpose(1, 0, 2, 3).reshape(cout, -1)
    colg = (w.reshape(cout, -1).T @ gmat).reshape(cin, kh, kw, n, ho, wo)
    gx = np.zeros((n, cin, h + 2 * pad, w_ + 2 * pad), dtype=gy.dtype)
    for i in range(kh):
        hi = slice(i, i + stride * (ho - 1) + 1, stride)
        for j in range(kw):
            wi = slice(j, j + stride * (wo - 1) + 1, stride)
            gx[:, :, hi, wi] += colg[:, i, j].transpose(1, 0, 2, 3)
    if pad:
        gx = gx[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(gx)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation, weight layout (C_out, C_in, kH, kW).

    Output spatial size is floor((H + 2*pad - k)/stride) + 1 per axis.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input channels {x.shape[1]} != weight in-channels {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias {b.shape} does not match out channels {w.shape[0]}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride {stride} or padding {padding}")
    _check_same_dtype(x, w, b)

    out = _conv_forward(x.data, w.data, stride, padding)
    out += b.data[None, :, None, None]
    xd, wd = x.data, w.data
    kh, kw = w.shape[2], w.shape[3]
    h, w_ = x.shape[2], x.shape[3]

    def backward(gy):
        gx = _conv_grad_input(gy, wd, stride, padding, h, w_)
        gw = _conv_grad_weight(xd, gy, kh, kw, stride, padding)
        gb = gy.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return from_op(out, (x, w, b), "conv2d", backward)


def transposed_conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of conv2d with identical geometry, weight layout (C_in, C_out, kH, kW).

    Output spatial size is (H - 1)*stride - 2*pad + k per axis.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"transposed_conv2d: need 4-d input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"transposed_conv2d: input channels {x.shape[1]} != weight in-channels {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"transposed_conv2d: bias {b.shape} does not match out channels {w.shape[1]}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"transposed_conv2d: invalid stride {stride} or padding {padding}")
    _check_same_dtype(x, w, b)

    kh, kw = w.shape[2], w.shape[3]
    ho = (x.shape[2] - 1) * stride - 2 * padding + kh
    wo = (x.shape[3] - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise ShapeError(f"transposed_conv2d geometry produces empty output for input {x.shape}")
    out = _conv_grad_input(x.data, w.data, stride, padding, ho, wo)
    out += b.data[None, :, None, None]
    xd, wd = x.data, w.data

    def backward(gy):
        gx = _conv_forward(gy, wd, stride, padding)
        gw = _conv_grad_weight(gy, xd, kh, kw, stride, padding)
        gb = gy.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return from_op(out, (x, w, b), "transposed_conv2d", backward)


# -- resize -------------------------------------------------------------------


_RESIZE_CACHE: dict = {}


def _resize_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """1-d bilinear interpolation matrix, half-pixel centers, edge-clamped."""
    key = (n_in, n_out, np.dtype(dtype).str)
    m = _RESIZE_CACHE.get(key)
    if m is not None:
        return m
    m = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    x0 = np.floor(src).astype(np.int64)
    frac = src - x0
    lo = np.clip(x0, 0, n_in - 1)
    hi = np.clip(x0 + 1, 0, n_in - 1)
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), (1.0 - frac).astype(dtype))
    np.add.at(m, (rows, hi), frac.astype(dtype))
    _RESIZE_CACHE[key] = m
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resample of an NCHW tensor to (out_h, out_w).

    Half-pixel-center convention with edge-clamped reads; exact identity
    when the output size equals the input size.
    """
    if x.ndim != 4:
        raise ShapeError(f"bilinear_resize: expected NCHW input, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize: invalid output size {out_h}x{out_w}")
    h, w = x.shape[2], x.shape[3]
    if out_h == h and out_w == w:
        return from_op(x.data.copy(), (x,), "bilinear_resize", lambda gy: (gy,))
    rh = _resize_matrix(h, out_h, x.dtype)
    rw = _resize_matrix(w, out_w, x.dtype)
    out = np.matmul(np.matmul(rh, x.data), rw.T)

    def backward(gy):
        return (np.matmul(np.matmul(rh.T, gy), rw),)

    return from_op(out, (x,), "bilinear_resize", backward)


def pad_replicate(x: Tensor, pad: int) -> Tensor:
    """Edge-replicating spatial padding of an NCHW tensor."""
    if x.ndim != 4:
        raise ShapeError(f"pad_replicate: expected NCHW input, got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    if pad < 1:
        raise ShapeError(f"pad_replicate: pad must be >= 1, got {pad}")
    out = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")

    def backward(gy):
        # fold the replicated border back onto the edge rows/columns
        rows = gy[:, :, pad:pad + h, :].copy()
        rows[:, :, 0, :] += gy[:, :, :pad, :].sum(axis=2)
        rows[:, :, h - 1, :] += gy[:, :, pad + h:, :].sum(axis=2)
        gx = rows[:, :, :, pad:pad + w].copy()
        gx[:, :, :, 0] += rows[:, :, :, :pad].sum(axis=3)
        gx[:, :, :, w - 1] += rows[:, :, :, pad + w:].sum(axis=3)
        return (gx,)

    return from_op(out, (x,), "pad_replicate", backward)


# -- straight-through sampling -------------------------------------------------


def ste_bernoulli(w: Tensor, rng: np.random.Generator) -> Tensor:
    """Bernoulli(w) sample with a straight-through identity backward.

    Forward emits hard 0/1 values; the backward rule passes the incoming
    gradient through unchanged, so the sampling probabilities receive
    exactly the gradient computed at the binary sample.
    """
    u = rng.random(w.shape)
    out = (u < w.data).astype(w.data.dtype)
    return from_op(out, (w,), "ste_bernoulli", lambda gy: (gy,))
