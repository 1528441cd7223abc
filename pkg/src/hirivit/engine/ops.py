"""Differentiable primitives over :class:`~hirivit.engine.tensor.Tensor`.

Conventions
-----------
* conv2d implements cross-correlation (no kernel flip).
* Reductions over token axes inside attention (softmax denominator, the
  attention-times-values product) sum in value-sorted order, which makes the
  forward pass bit-identical under any permutation of the reduced axis.
* Forward kernels for conv/linear/matmul dispatch through a swappable
  backend so an instrumented MAC-counting executor can drive the same graph.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import erf

from ..errors import ConfigError, ResolutionError, ShapeError
from .tensor import Tensor, make_result

INV_SQRT2 = float(1.0 / np.sqrt(2.0))
INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


# ---------------------------------------------------------------------------
# kernel backends
# ---------------------------------------------------------------------------

class FastBackend:
    """Vectorized NumPy kernels (default)."""

    counting = False

    def matmul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.matmul(a, b)

    def linear(self, x2, w, b):
        y = x2 @ w.T
        if b is not None:
            y = y + b
        return y

    def conv2d(self, x, w, bias, stride, padding, groups):
        return _conv2d_fast(x, w, bias, stride, padding, groups)


_backend = FastBackend()


def current_backend():
    return _backend


@contextlib.contextmanager
def use_backend(backend):
    global _backend
    prev = _backend
    _backend = backend
    try:
        yield backend
    finally:
        _backend = prev


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse a NumPy broadcast)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def ordered_sum(x: np.ndarray, axis: int) -> np.ndarray:
    """Sum along ``axis`` with the addends in ascending value order.

    The result is invariant (bitwise) to permutations along ``axis``.
    """
    return np.sum(np.sort(x, axis=axis), axis=axis)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return make_result(data, (a, b), "add", bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return make_result(data, (a, b), "sub", bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return make_result(data, (a, b), "mul", bw)


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def bw(g):
        return (g * s,)

    return make_result(data, (a,), "scale", bw)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(a.shape),)

    return make_result(data, (a,), "reshape", bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inv),)

    return make_result(data, (a,), "transpose", bw)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(data, tensors, "concat", bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return make_result(data, (a,), "sum", bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    elif isinstance(axis, int):
        n = a.shape[axis]
    else:
        n = int(np.prod([a.shape[ax] for ax in axis]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# dense linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
            f" (axis -1 of lhs is {a.shape[-1]}, axis -2 of rhs is {b.shape[-2]})")
    data = current_backend().matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return make_result(data, (a, b), "matmul", bw)


def ordered_matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul whose contraction sums in value-sorted order.

    Used for the attention x values product: the output is bitwise stable
    under a joint permutation of the contracted (key/value token) axis.
    Memory cost is O(m*k*p) per batch element, acceptable for attention-size
    operands.
    """
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    be = current_backend()
    if be.counting:
        data = be.matmul(a.data, b.data)
    else:
        prod = a.data[..., :, :, None] * b.data[..., None, :, :]
        data = ordered_sum(prod, axis=-2)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return make_result(data, (a, b), "ordered_matmul", bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    din = x.shape[-1]
    dout, din_w = weight.shape
    if din != din_w:
        raise ShapeError(
            f"linear input feature axis {din} does not match weight columns {din_w}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, din)
    y2 = current_backend().linear(x2, weight.data,
                                  bias.data if bias is not None else None)
    data = y2.reshape(*lead, dout)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, dout)
        gx = (g2 @ weight.data).reshape(x.shape)
        gw = g2.T @ x2
        if bias is None:
            return (gx, gw)
        return (gx, gw, g2.sum(axis=0))

    return make_result(data, parents, "linear", bw)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_out_hw(h, w, kh, kw, sh, sw, ph, pw):
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    return oh, ow


def _im2col(xp, kh, kw, sh, sw, groups):
    """(N, Cin, Hp, Wp) -> (N, g, cing*kh*kw, L) patch matrix."""
    n, cin, hp, wp = xp.shape
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]                      # (N, Cin, OH, OW, kh, kw)
    oh, ow = win.shape[2], win.shape[3]
    cing = cin // groups
    win = win.transpose(0, 1, 4, 5, 2, 3)            # (N, Cin, kh, kw, OH, OW)
    cols = win.reshape(n, groups, cing * kh * kw, oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def _conv2d_fast(x, w, bias, stride, padding, groups):
    n, cin, h, wd = x.shape
    cout, cing, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    cols, oh, ow = _im2col(xp, kh, kw, sh, sw, groups)
    w2 = w.reshape(groups, cout // groups, cing * kh * kw)
    out = np.matmul(w2, cols)                        # (N, g, coutg, L)
    out = out.reshape(n, cout, oh, ow)
    if bias is not None:
        out = out + bias.reshape(1, cout, 1, 1)
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=(1, 1), padding=(0, 0), groups: int = 1) -> Tensor:
    if isinstance(stride, int):
        stride = (stride, stride)
    if isinstance(padding, int):
        padding = (padding, padding)
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got {x.shape}")
    n, cin, h, w_in = x.shape
    cout, cing, kh, kw = weight.shape
    if cin % groups or cout % groups:
        raise ShapeError(
            f"channels not divisible by groups: Cin={cin}, Cout={cout}, groups={groups}")
    if cing != cin // groups:
        raise ShapeError(
            f"weight channel axis {cing} does not match Cin/groups = {cin // groups}")
    sh, sw = stride
    ph, pw = padding
    oh, ow = _conv_out_hw(h, w_in, kh, kw, sh, sw, ph, pw)
    if oh < 1 or ow < 1:
        raise ResolutionError(
            f"conv2d output underflows: input {h}x{w_in}, kernel {kh}x{kw},"
            f" stride {sh}x{sw}, padding {ph}x{pw} -> {oh}x{ow}")

    data = current_backend().conv2d(x.data, weight.data,
                                    bias.data if bias is not None else None,
                                    stride, padding, groups)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        # recompute patches; backward always uses the vectorized path
        xp = (np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
              if (ph or pw) else x.data)
        cols, _, _ = _im2col(xp, kh, kw, sh, sw, groups)
        coutg = cout // groups
        g4 = g.reshape(n, groups, coutg, oh * ow)
        gw = np.einsum("ngol,ngkl->gok", g4, cols, optimize=True)
        gw = gw.reshape(cout, cing, kh, kw)
        w2 = weight.data.reshape(groups, coutg, cing * kh * kw)
        gcols = np.matmul(np.swapaxes(w2, -1, -2), g4)   # (N, g, cing*kh*kw, L)
        gcols = gcols.reshape(n, cin, kh, kw, oh, ow)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            hi = i + sh * oh
            for j in range(kw):
                wj = j + sw * ow
                gxp[:, :, i:hi:sh, j:wj:sw] += gcols[:, :, i, j]
        gx = gxp[:, :, ph:ph + h, pw:pw + w_in] if (ph or pw) else gxp
        if bias is None:
            return (gx, gw)
        return (gx, gw, g.sum(axis=(0, 2, 3)))

    return make_result(data, parents, "conv2d", bw)


def conv2d_macs(x_shape, w_shape, stride, padding, groups) -> int:
    n, cin, h, w = x_shape
    cout, cing, kh, kw = w_shape
    oh, ow = _conv_out_hw(h, w, kh, kw, stride[0], stride[1], padding[0], padding[1])
    return n * cout * oh * ow * cing * kh * kw


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Channel-wise batch normalization over an NCHW tensor.

    In training mode the batch statistics normalize and the running buffers
    are updated in place; in eval mode the running buffers normalize.
    """
    if eps <= 0:
        raise ConfigError(f"batch_norm epsilon must be positive, got {eps}")
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    count = n * h * w
    if count < 1:
        raise ShapeError("batch_norm got an empty batch")
    axes = (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * count / max(count - 1, 1)
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mean
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased
    else:
        mean = running_mean
        var = running_var

    inv = 1.0 / np.sqrt(var + eps)
    xc = x.data - mean.reshape(1, c, 1, 1)
    xn = xc * inv.reshape(1, c, 1, 1)
    data = xn * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def bw(g):
        gvec = gamma.data.reshape(1, c, 1, 1)
        ggamma = (g * xn).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        if training:
            gxn = g * gvec
            m1 = gxn.mean(axis=axes).reshape(1, c, 1, 1)
            m2 = (gxn * xn).mean(axis=axes).reshape(1, c, 1, 1)
            gx = (gxn - m1 - xn * m2) * inv.reshape(1, c, 1, 1)
        else:
            gx = g * gvec * inv.reshape(1, c, 1, 1)
        return (gx, ggamma, gbeta)

    return make_result(data, (x, gamma, beta), "batch_norm", bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalization over the last axis, per token."""
    if eps <= 0:
        raise ConfigError(f"layer_norm epsilon must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shape {gamma.shape} does not match feature axis {d}")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = (x.data - mean) * inv
    data = xn * gamma.data + beta.data

    def bw(g):
        ggamma = (g * xn).reshape(-1, d).sum(axis=0)
        gbeta = g.reshape(-1, d).sum(axis=0)
        gxn = g * gamma.data
        m1 = gxn.mean(axis=-1, keepdims=True)
        m2 = (gxn * xn).mean(axis=-1, keepdims=True)
        gx = (gxn - m1 - xn * m2) * inv
        return (gx, ggamma, gbeta)

    return make_result(data, (x, gamma, beta), "layer_norm", bw)


# ---------------------------------------------------------------------------
# activations and probability maps
# ---------------------------------------------------------------------------

def gelu(x: Tensor) -> Tensor:
    """Exact-erf GELU."""
    phi = 0.5 * (1.0 + erf(x.data * INV_SQRT2))
    data = x.data * phi

    def bw(g):
        pdf = INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (phi + x.data * pdf),)

    return make_result(data, (x,), "gelu", bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax; the denominator sums in value-sorted order."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = np.expand_dims(ordered_sum(e, axis=axis), axis)
    data = e / denom

    def bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return make_result(data, (x,), "softmax", bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def bw(g):
        return (g - np.exp(data) * g.sum(axis=axis, keepdims=True),)

    return make_result(data, (x,), "log_softmax", bw)


# ---------------------------------------------------------------------------
# spatial resizing
# ---------------------------------------------------------------------------

def upsample_repeat(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbor upsampling: each cell becomes a factor x factor block."""
    if factor < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        data = x.data

        def bw1(g):
            return (g,)

        return make_result(data, (x,), "upsample_repeat", bw1)
    n, c, h, w = x.shape
    data = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return make_result(data, (x,), "upsample_repeat", bw)


def _pool_matrix(in_len: int, out_len: int, dtype) -> np.ndarray:
    """(out_len, in_len) averaging operator with adaptive window bounds."""
    m = np.zeros((out_len, in_len), dtype=dtype)
    for i in range(out_len):
        lo = (i * in_len) // out_len
        hi = -(-(i + 1) * in_len // out_len)   # ceil division
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool2d(x: Tensor, out_hw) -> Tensor:
    """Average pooling to an explicit output grid (adaptive window bounds).

    For an exact 2x reduction this coincides with a stride-2 2x2 average
    pool; odd and non-integer ratios use overlapping windows.
    """
    oh, ow = out_hw
    n, c, h, w = x.shape
    if oh < 1 or ow < 1 or oh > h or ow > w:
        raise ResolutionError(
            f"adaptive pool cannot map {h}x{w} onto {oh}x{ow}")
    rm = _pool_matrix(h, oh, x.dtype)
    cm = _pool_matrix(w, ow, x.dtype)
    data = np.einsum("oh,nchw,pw->ncop", rm, x.data, cm, optimize=True)

    def bw(g):
        return (np.einsum("oh,ncop,pw->nchw", rm, g, cm, optimize=True),)

    return make_result(data, (x,), "adaptive_avg_pool2d", bw)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    data = x.data.mean(axis=(2, 3))

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return make_result(data, (x,), "global_avg_pool", bw)
