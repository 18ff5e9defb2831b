"""Differentiable operator set.

Everything the two model architectures and the three losses need:
elementwise arithmetic with broadcasting, activations, reductions,
matmul/linear, 2-D convolution, batch normalization, embedding lookup,
split/select plumbing, and stabilized log-sum-exp helpers.

Operators never mutate input ``data`` (batch_norm's running-statistics
buffers, which are explicit side-state, are the one exception).
"""

import contextlib

import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor, grad_enabled

# When not None, relu appends its activation pattern here; the gradient
# checker uses this to drop finite-difference samples that cross the kink.
_pattern_trace = None


@contextlib.contextmanager
def record_patterns():
    global _pattern_trace
    prev = _pattern_trace
    _pattern_trace = []
    try:
        yield _pattern_trace
    finally:
        _pattern_trace = prev


def _out(data, parents, op):
    req = grad_enabled() and any(p.requires_grad for p in parents)
    if req:
        return Tensor(data, requires_grad=True, op=op, parents=tuple(parents))
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _constant_like(x: Tensor, value) -> Tensor:
    return Tensor(np.asarray(value, dtype=x.data.dtype))


def _pair(x, y):
    x = as_tensor(x)
    y = y if isinstance(y, Tensor) else _constant_like(x, y)
    return x, y


# ---------------------------------------------------------------- arithmetic


def add(x, y):
    x, y = _pair(x, y)
    out = _out(x.data + y.data, (x, y), "add")
    if out.requires_grad:
        def bw(g):
            if x.requires_grad:
                x.accum_grad(_unbroadcast(g, x.data.shape))
            if y.requires_grad:
                y.accum_grad(_unbroadcast(g, y.data.shape))
        out._backward = bw
    return out


def sub(x, y):
    x, y = _pair(x, y)
    out = _out(x.data - y.data, (x, y), "sub")
    if out.requires_grad:
        def bw(g):
            if x.requires_grad:
                x.accum_grad(_unbroadcast(g, x.data.shape))
            if y.requires_grad:
                y.accum_grad(_unbroadcast(-g, y.data.shape))
        out._backward = bw
    return out


def mul(x, y):
    x, y = _pair(x, y)
    out = _out(x.data * y.data, (x, y), "mul")
    if out.requires_grad:
        def bw(g):
            if x.requires_grad:
                x.accum_grad(_unbroadcast(g * y.data, x.data.shape))
            if y.requires_grad:
                y.accum_grad(_unbroadcast(g * x.data, y.data.shape))
        out._backward = bw
    return out


def div(x, y):
    x, y = _pair(x, y)
    out = _out(x.data / y.data, (x, y), "div")
    if out.requires_grad:
        def bw(g):
            if x.requires_grad:
                x.accum_grad(_unbroadcast(g / y.data, x.data.shape))
            if y.requires_grad:
                y.accum_grad(_unbroadcast(-g * x.data / (y.data * y.data), y.data.shape))
        out._backward = bw
    return out


def neg(x):
    x = as_tensor(x)
    out = _out(-x.data, (x,), "neg")
    if out.requires_grad:
        out._backward = lambda g: x.accum_grad(-g)
    return out


def scale(x, c: float):
    x = as_tensor(x)
    c = x.data.dtype.type(c)
    out = _out(x.data * c, (x,), "scale")
    if out.requires_grad:
        out._backward = lambda g: x.accum_grad(g * c)
    return out


def residual_add(x, y):
    """Shortcut addition; operand shapes must match exactly."""
    x, y = as_tensor(x), as_tensor(y)
    if x.data.shape != y.data.shape:
        raise ValueError(f"residual_add: operand shapes {x.data.shape} != {y.data.shape}")
    return add(x, y)


# --------------------------------------------------------------- elementwise


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    if _pattern_trace is not None:
        _pattern_trace.append(mask)
    out = _out(np.where(mask, x.data, x.data.dtype.type(0)), (x,), "relu")
    if out.requires_grad:
        out._backward = lambda g: x.accum_grad(g * mask)
    return out


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    s = s.astype(d.dtype, copy=False)
    out = _out(s, (x,), "sigmoid")
    if out.requires_grad:
        out._backward = lambda g: x.accum_grad(g * s * (1.0 - s))
    return out


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)
    out = _out(t, (x,), "tanh")
    if out.requires_grad:
        out._backward = lambda g: x.accum_grad(g * (1.0 - t * t))
    return out


def exp(x):
    x = as_tensor(x)
    e = np.exp(x.data)
    out = _out(e, (x,), "exp")
    if out.requires_grad:
        out._backward = lambda g: x.accum_grad(g * e)
    return out


def log(x):
    x = as_tensor(x)
    out = _out(np.log(x.data), (x,), "log")
    if out.requires_grad:
        out._backward = lambda g: x.accum_grad(g / x.data)
    return out


def sqrt(x):
    x = as_tensor(x)
    r = np.sqrt(x.data)
    out = _out(r, (x,), "sqrt")
    if out.requires_grad:
        out._backward = lambda g: x.accum_grad(g / (2.0 * r))
    return out


def square(x):
    x = as_tensor(x)
    out = _out(x.data * x.data, (x,), "square")
    if out.requires_grad:
        out._backward = lambda g: x.accum_grad(g * 2.0 * x.data)
    return out


def softplus(x):
    """log(1 + exp(x)), overflow-safe."""
    x = as_tensor(x)
    d = x.data
    val = np.log1p(np.exp(-np.abs(d))) + np.maximum(d, 0)
    out = _out(val.astype(d.dtype, copy=False), (x,), "softplus")
    if out.requires_grad:
        def bw(g):
            sig = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
            x.accum_grad(g * sig)
        out._backward = bw
    return out


# ---------------------------------------------------------------- reductions


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_axis(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axes(axis, x.data.ndim)
    data = x.data.sum(axis=axes, keepdims=keepdims)
    out = _out(data, (x,), "sum")
    if out.requires_grad:
        def bw(g):
            gg = g if keepdims else np.expand_dims(g, axes)
            x.accum_grad(np.broadcast_to(gg, x.data.shape))
        out._backward = bw
    return out


def mean_axis(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axes(axis, x.data.ndim)
    data = x.data.mean(axis=axes, keepdims=keepdims)
    count = x.data.dtype.type(x.data.size // max(data.size, 1))
    out = _out(data, (x,), "mean")
    if out.requires_grad:
        def bw(g):
            gg = g if keepdims else np.expand_dims(g, axes)
            x.accum_grad(np.broadcast_to(gg, x.data.shape) / count)
        out._backward = bw
    return out


# ------------------------------------------------------------ shape plumbing


def reshape(x, shape):
    x = as_tensor(x)
    out = _out(x.data.reshape(shape), (x,), "reshape")
    if out.requires_grad:
        out._backward = lambda g: x.accum_grad(g.reshape(x.data.shape))
    return out


def transpose(x):
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ValueError(f"transpose: expected 2-D, got shape {x.data.shape}")
    out = _out(x.data.T.copy(), (x,), "transpose")
    if out.requires_grad:
        out._backward = lambda g: x.accum_grad(g.T)
    return out


def split(x, n: int, axis: int = -1):
    """Split into n equal parts along an axis; gradients re-assemble."""
    x = as_tensor(x)
    axis = axis % x.data.ndim
    size = x.data.shape[axis]
    if size % n != 0:
        raise ValueError(f"split: axis size {size} not divisible by {n}")
    step = size // n
    outs = []
    for i in range(n):
        sl = [slice(None)] * x.data.ndim
        sl[axis] = slice(i * step, (i + 1) * step)
        sl = tuple(sl)
        out = _out(np.ascontiguousarray(x.data[sl]), (x,), "split")
        if out.requires_grad:
            def bw(g, sl=sl):
                if x.grad is None:
                    x.grad = np.zeros_like(x.data)
                x.grad[sl] += g
            out._backward = bw
        outs.append(out)
    return outs


def masked_select(x, mask: np.ndarray):
    """Entries of x where mask is True, flattened (C order)."""
    x = as_tensor(x)
    if mask.shape != x.data.shape:
        raise ValueError("masked_select: mask shape mismatch")
    out = _out(x.data[mask], (x,), "masked_select")
    if out.requires_grad:
        def bw(g):
            scat = np.zeros_like(x.data)
            scat[mask] = g
            x.accum_grad(scat)
        out._backward = bw
    return out


def lookup(table, ids: np.ndarray):
    """Embedding lookup; row 0 is a fixed all-zero padding row."""
    ids = np.asarray(ids)
    out = _out(table.data[ids], (table,), "lookup")
    if out.requires_grad:
        def bw(g):
            dt = np.zeros_like(table.data)
            np.add.at(dt, ids, g)
            dt[0] = 0.0
            table.accum_grad(dt)
        out._backward = bw
    return out


# ------------------------------------------------------------- linear algebra


def matmul(x, y):
    x, y = as_tensor(x), as_tensor(y)
    if x.data.ndim != 2 or y.data.ndim != 2:
        raise ValueError(f"matmul: expected 2-D operands, got {x.data.shape} @ {y.data.shape}")
    if x.data.shape[1] != y.data.shape[0]:
        raise ValueError(f"matmul: inner dimensions mismatch {x.data.shape} @ {y.data.shape}")
    out = _out(x.data @ y.data, (x, y), "matmul")
    if out.requires_grad:
        def bw(g):
            if x.requires_grad:
                x.accum_grad(g @ y.data.T)
            if y.requires_grad:
                y.accum_grad(x.data.T @ g)
        out._backward = bw
    return out


def linear(x, w, b=None):
    """x @ w (+ b); x is (B, D), w is (D, N), b is (N,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"linear: shapes {x.data.shape} @ {w.data.shape} incompatible")
    data = x.data @ w.data
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        data = data + b.data
        parents.append(b)
    out = _out(data, parents, "linear")
    if out.requires_grad:
        def bw(g):
            if x.requires_grad:
                x.accum_grad(g @ w.data.T)
            if w.requires_grad:
                w.accum_grad(x.data.T @ g)
            if b is not None and b.requires_grad:
                b.accum_grad(g.sum(axis=0))
        out._backward = bw
    return out


# ------------------------------------------------------------------- softmax


def softmax(x, axis: int = -1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _out(y, (x,), "softmax")
    if out.requires_grad:
        def bw(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            x.accum_grad(y * (g - dot))
        out._backward = bw
    return out


def masked_logsumexp(x, mask: np.ndarray):
    """log sum exp over the masked entries only; scalar output."""
    x = as_tensor(x)
    if mask.shape != x.data.shape:
        raise ValueError("masked_logsumexp: mask shape mismatch")
    if not mask.any():
        raise ValueError("masked_logsumexp: empty mask")
    vals = x.data[mask]
    m = vals.max()
    e = np.zeros_like(x.data)
    e[mask] = np.exp(vals - m)
    s = e.sum()
    out = _out(np.asarray(m + np.log(s), dtype=x.data.dtype), (x,), "masked_logsumexp")
    if out.requires_grad:
        out._backward = lambda g: x.accum_grad(g * e / s)
    return out


# ----------------------------------------------------------------- conv / bn


def conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0)):
    """2-D convolution (cross-correlation), NHWC layout.

    x is (B, H, W, C), w is (KH, KW, C, O), output (B, Ho, Wo, O).
    The unfolded patches go through a single (B*Ho*Wo, KH*KW*C) matmul.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input (B,H,W,C), got {x.data.shape}")
    if w.data.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D weight (KH,KW,C,O), got {w.data.shape}")
    B, H, W, C = x.data.shape
    KH, KW, Cw, O = w.data.shape
    if C != Cw:
        raise ValueError(f"conv2d: input has {C} channels, weight expects {Cw}")
    sy, sx = stride
    py, px = padding
    Ho = (H + 2 * py - KH) // sy + 1
    Wo = (W + 2 * px - KW) // sx + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(f"conv2d: kernel {KH}x{KW} too large for input {H}x{W} with padding {padding}")
    if py or px:
        xp = np.pad(x.data, ((0, 0), (py, py), (px, px), (0, 0)))
    else:
        xp = np.ascontiguousarray(x.data)
    cols = kernels.im2col(xp, KH, KW, sy, sx, Ho, Wo)
    cols2 = cols.reshape(B * Ho * Wo, KH * KW * C)
    wmat = w.data.reshape(KH * KW * C, O)
    out2 = cols2 @ wmat
    if b is not None:
        b = as_tensor(b)
        out2 += b.data
    parents = [x, w] + ([b] if b is not None else [])
    out = _out(out2.reshape(B, Ho, Wo, O), parents, "conv2d")
    if out.requires_grad:
        def bw(g):
            g2 = g.reshape(B * Ho * Wo, O)
            if w.requires_grad:
                w.accum_grad((cols2.T @ g2).reshape(w.data.shape))
            if b is not None and b.requires_grad:
                b.accum_grad(g2.sum(axis=0))
            if x.requires_grad:
                dcols = (g2 @ wmat.T).reshape(B, Ho, Wo, KH * KW * C)
                dxp = kernels.col2im(dcols, xp.shape, KH, KW, sy, sx, Ho, Wo)
                dx = dxp[:, py : py + H, px : px + W, :] if (py or px) else dxp
                x.accum_grad(dx)
        out._backward = bw
    return out


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.9, eps=1e-5):
    """Channel batch normalization over NHWC input (B, H, W, C).

    Training mode normalizes with batch statistics and updates the running
    buffers in place (population variance); eval mode uses the buffers.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.ndim != 4:
        raise ValueError(f"batch_norm: expected 4-D input, got {x.data.shape}")
    C = x.data.shape[3]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ValueError(f"batch_norm: gamma/beta must have shape ({C},)")
    axes = (0, 1, 2)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu = running_mean.astype(x.data.dtype, copy=False)
        var = running_var.astype(x.data.dtype, copy=False)
    ivar = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype, copy=False)
    xhat = x.data - mu
    xhat *= ivar
    data = gamma.data * xhat
    data += beta.data
    out = _out(data, (x, gamma, beta), "batch_norm")
    if out.requires_grad:
        n = x.data.size // C
        def bw(g):
            if gamma.requires_grad:
                gamma.accum_grad((g * xhat).sum(axis=axes))
            if beta.requires_grad:
                beta.accum_grad(g.sum(axis=axes))
            if x.requires_grad:
                dxhat = g * gamma.data
                if training:
                    s1 = dxhat.sum(axis=axes)
                    s2 = (dxhat * xhat).sum(axis=axes)
                    dx = dxhat
                    dx -= s1 / n
                    dx -= xhat * (s2 / n)
                    dx *= ivar
                else:
                    dx = dxhat * ivar
                x.accum_grad(dx)
        out._backward = bw
    return out


# ------------------------------------------------------------------ composite


def l2_normalize(x, axis: int = -1):
    """x / ||x|| along an axis; callers guarantee non-zero rows."""
    n = sqrt(sum_axis(square(x), axis=axis, keepdims=True))
    return div(x, n)
