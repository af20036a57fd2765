"""Differentiable operators over NCHW tensors.

Every op is a pure function of its inputs (plus explicit state for batch
norm). Forward results do not depend on thread scheduling: reductions use
fixed numpy/BLAS call shapes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make_output


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_output("add", out, (a, b), back)


def add_n(tensors) -> Tensor:
    """Sum of equally shaped tensors, accumulated left to right."""
    tensors = list(tensors)
    if len(tensors) == 1:
        return tensors[0]
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        if t.shape != out.shape:
            raise ShapeError(f"add_n: shape {t.shape} != {out.shape}")
        out += t.data

    def back(g):
        return [g] * len(tensors)

    return make_output("add_n", out, tensors, back)


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = a.data - b.data

    def back(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return make_output("sub", out, (a, b), back)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = a.data * b.data

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_output("mul", out, (a, b), back)


def scale(x: Tensor, c: float) -> Tensor:
    out = x.data * x.dtype.type(c)

    def back(g):
        return (g * x.dtype.type(c),)

    return make_output("scale", out, (x,), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, x.dtype.type(0))

    def back(g):
        return (g * mask,)

    return make_output("relu", out, (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    # exp of a non-positive argument only, so no overflow for large |z|
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)

    def back(g):
        return (g * out * (1 - out),)

    return make_output("sigmoid", out, (x,), back)


def pointwise_map(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown pointwise kind {kind!r}")


def abs_(x: Tensor) -> Tensor:
    out = np.abs(x.data)

    def back(g):
        return (g * np.sign(x.data),)

    return make_output("abs", out, (x,), back)


def log_clamped(x: Tensor, eps: float = 1e-9) -> Tensor:
    """log(max(x, eps)); the gradient is zero where the clamp is active."""
    safe = np.maximum(x.data, x.dtype.type(eps))
    out = np.log(safe)
    live = x.data > eps

    def back(g):
        return (np.where(live, g / safe, 0).astype(x.dtype, copy=False),)

    return make_output("log", out, (x,), back)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def back(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return make_output("sum", out, (x,), back)


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = np.asarray(x.data.sum() / n, dtype=x.dtype)

    def back(g):
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return make_output("mean", out, (x,), back)


def sum_rows(x: Tensor) -> Tensor:
    """Sum over the last axis of a 2-D tensor: [N,K] -> [N]."""
    out = x.data.sum(axis=-1)

    def back(g):
        return (np.broadcast_to(g[..., None], x.shape).astype(x.dtype),)

    return make_output("sum_rows", out, (x,), back)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def back(g):
        return (g.reshape(x.shape),)

    return make_output("reshape", out, (x,), back)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


# --------------------------------------------------------------------------
# convolution


def _conv_out(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, pad=0, groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding and channel groups."""
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got shape {x.shape}", dim="x.ndim")
    if w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D weights, got shape {w.shape}", dim="w.ndim")
    n, cin, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    if sh < 1 or sw < 1:
        raise ShapeError(f"stride must be >= 1, got {(sh, sw)}", dim="stride")
    if ph < 0 or pw < 0:
        raise ShapeError(f"padding must be >= 0, got {(ph, pw)}", dim="pad")
    if groups < 1 or cin % groups:
        raise ShapeError(f"Cin={cin} not divisible by groups={groups}", dim="Cin")
    if cout % groups:
        raise ShapeError(f"Cout={cout} not divisible by groups={groups}", dim="Cout")
    if cg != cin // groups:
        raise ShapeError(f"weight Cin/groups={cg} but input gives {cin // groups}", dim="Cin/groups")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"bias shape {b.shape} != ({cout},)", dim="Cout")
    ho, wo = _conv_out(h, kh, sh, ph), _conv_out(wd, kw, sw, pw)
    if ho < 1:
        raise ShapeError(f"kernel height {kh} exceeds padded input height {h + 2 * ph}", dim="H")
    if wo < 1:
        raise ShapeError(f"kernel width {kw} exceeds padded input width {wd + 2 * pw}", dim="W")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    depthwise = groups == cin and cout == cin and groups > 1

    if depthwise:
        out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                tap = xp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
                out += tap * w.data[None, :, 0, i, j, None, None]
        win = None
    else:
        if kh == kw == 1:
            win = xp[:, :, ::sh, ::sw][:, :, :ho, :wo, None, None]
        else:
            win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        og = cout // groups
        if groups == 1:
            out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        else:
            parts = []
            for gi in range(groups):
                wg = w.data[gi * og:(gi + 1) * og]
                xg = win[:, gi * cg:(gi + 1) * cg]
                parts.append(np.tensordot(xg, wg, axes=([1, 4, 5], [1, 2, 3])))
            out = np.concatenate(parts, axis=3).transpose(0, 3, 1, 2)
        out = np.ascontiguousarray(out)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def back(g):
        gxp = np.zeros_like(xp)
        if depthwise:
            gw = np.zeros_like(w.data)
            for i in range(kh):
                for j in range(kw):
                    sl = (slice(None), slice(None), slice(i, i + sh * (ho - 1) + 1, sh),
                          slice(j, j + sw * (wo - 1) + 1, sw))
                    gw[:, 0, i, j] = (g * xp[sl]).sum(axis=(0, 2, 3))
                    gxp[sl] += g * w.data[None, :, 0, i, j, None, None]
        else:
            og = cout // groups
            gws = []
            # channel-major scratch so each tap adds a contiguous block
            gxt = np.zeros((cin, n) + xp.shape[2:], dtype=xp.dtype)
            for gi in range(groups):
                gg = g[:, gi * og:(gi + 1) * og]
                wg = w.data[gi * og:(gi + 1) * og]
                xg = win[:, gi * cg:(gi + 1) * cg]
                gws.append(np.tensordot(gg, xg, axes=([0, 2, 3], [0, 2, 3])))
                col = np.tensordot(wg, gg, axes=([0], [1]))  # cg,kh,kw,N,Ho,Wo
                for i in range(kh):
                    for j in range(kw):
                        gxt[gi * cg:(gi + 1) * cg, :, i:i + sh * (ho - 1) + 1:sh,
                            j:j + sw * (wo - 1) + 1:sw] += col[:, i, j]
            gxp = gxt.transpose(1, 0, 2, 3)
            gw = np.concatenate(gws, axis=0)
        gx = gxp[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gxp
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw.astype(w.dtype, copy=False), gb

    inputs = (x, w) if b is None else (x, w, b)
    return make_output("conv2d", out.astype(x.dtype, copy=False), inputs, back)


def fully_connected(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"fully_connected expects 2-D x and w, got {x.shape} and {w.shape}", dim="ndim")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"inner dims differ: x has D={x.shape[1]}, w has D={w.shape[1]}", dim="D")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} != ({w.shape[0]},)", dim="K")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def back(g):
        return g @ w.data, g.T @ x.data, (g.sum(axis=0) if b is not None else None)

    inputs = (x, w) if b is None else (x, w, b)
    return make_output("fc", out, inputs, back)


def softmax(x: Tensor) -> Tensor:
    """Row softmax over the last axis of an [N,K] tensor."""
    if x.shape[-1] < 1:
        raise ShapeError("softmax needs K >= 1", dim="K")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_output("softmax", out, (x,), back)


# --------------------------------------------------------------------------
# pooling / resampling


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def back(g):
        return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)

    return make_output("gap", out, (x,), back)


def max_pool(x: Tensor, k: int = 2, stride: int | None = None, ceil_mode: bool = False) -> Tensor:
    """Max pool; gradient goes to the first argmax in each window."""
    s = k if stride is None else int(stride)
    n, c, h, w = x.shape
    if ceil_mode:
        ho = max(-(-(h - k) // s), 0) + 1
        wo = max(-(-(w - k) // s), 0) + 1
        ph = max((ho - 1) * s + k - h, 0)
        pw = max((wo - 1) * s + k - w, 0)
    else:
        if k > h or k > w:
            raise ShapeError(f"pool window {k} larger than input {h}x{w}", dim="H" if k > h else "W")
        ho, wo = (h - k) // s + 1, (w - k) // s + 1
        ph = pw = 0
    xp = x.data
    if ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for idx in range(k * k):
            i, j = divmod(idx, k)
            hit = arg == idx
            gxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += np.where(hit, g, 0)
        return (gxp[:, :, :h, :w],)

    return make_output("max_pool", np.ascontiguousarray(out), (x,), back)


def reduce(x: Tensor, kind: str, k: int = 2, stride: int | None = None) -> Tensor:
    if kind == "global_avg_pool":
        return global_avg_pool(x)
    if kind == "max_pool":
        return max_pool(x, k, stride)
    raise ValueError(f"unknown reduce kind {kind!r}")


def upsample_nearest(x: Tensor, factor: int = 2, out_hw: tuple[int, int] | None = None) -> Tensor:
    """Nearest-neighbour upsample, then crop to ``out_hw`` if given."""
    n, c, h, w = x.shape
    up = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    oh, ow = out_hw if out_hw is not None else (h * factor, w * factor)
    out = np.ascontiguousarray(up[:, :, :oh, :ow])

    def back(g):
        full = np.zeros((n, c, h * factor, w * factor), dtype=g.dtype)
        full[:, :, :oh, :ow] = g
        return (full.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return make_output("upsample", out, (x,), back)


def separable_linear(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    """Apply fixed matrices along H and W: y = mh @ x @ mw.T per channel."""
    out = np.matmul(mh, np.matmul(x.data, mw.T))

    def back(g):
        return (np.matmul(mh.T, np.matmul(g, mw)),)

    return make_output("separable", out.astype(x.dtype, copy=False), (x,), back)


# --------------------------------------------------------------------------
# batch norm


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    updated: bool = False
    _warned: bool = field(default=False, repr=False)

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum, eps)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    n, c, h, w = x.shape
    m = n * h * w
    if m < 1:
        raise ShapeError("batchnorm2d needs N*H*W >= 1", dim="N*H*W")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)", dim="C")
    eps = x.dtype.type(state.eps)
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mean[None, :, None, None]
        var = (centered * centered).mean(axis=(0, 2, 3))
        mom = state.momentum
        unbiased = var * (m / (m - 1)) if m > 1 else var
        state.running_mean = ((1 - mom) * state.running_mean + mom * mean).astype(state.running_mean.dtype)
        state.running_var = ((1 - mom) * state.running_var + mom * unbiased).astype(state.running_var.dtype)
        state.updated = True
    else:
        if not state.updated and not state._warned:
            warnings.warn("batchnorm2d evaluated before any training update; using initial "
                          "running stats (mean 0, var 1)", RuntimeWarning, stacklevel=2)
            state._warned = True
        mean = state.running_mean.astype(x.dtype, copy=False)
        var = state.running_var.astype(x.dtype, copy=False)
        centered = x.data - mean[None, :, None, None]
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * invstd[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def back(g):
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            s1 = gxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            s2 = (gxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
            gx = (invstd[None, :, None, None] / m) * (m * gxhat - s1 - xhat * s2)
        else:
            gx = gxhat * invstd[None, :, None, None]
        return gx.astype(x.dtype, copy=False), ggamma, gbeta

    return make_output("batchnorm2d", out.astype(x.dtype, copy=False), (x, gamma, beta), back)
