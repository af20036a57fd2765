"""Composite building blocks: anti-aliased downsampling, attention condensers,
depthwise-separable residual blocks and the dual-softmax classifier head."""

from __future__ import annotations

from dataclasses import dataclass, fields
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .autodiff import ops
from .autodiff.ops import BatchNormState
from .autodiff.tensor import Tensor
from .errors import ShapeError

BINOMIAL = {3: np.array([1.0, 2.0, 1.0]), 5: np.array([1.0, 4.0, 6.0, 4.0, 1.0])}


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
    return Tensor(w, requires_grad=True)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


class _Params:
    """Mixin giving dataclass parameter bundles a name -> Tensor view."""

    def named_tensors(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if isinstance(getattr(self, f.name), Tensor)}


# --------------------------------------------------------------------------
# anti-aliased downsampling


@lru_cache(maxsize=64)
def _aads_matrix(n: int, filter_size: int, dtype_str: str) -> np.ndarray:
    """Reflect-pad, blur and stride-2 subsample along one axis as a matrix."""
    taps = BINOMIAL[filter_size] / BINOMIAL[filter_size].sum()
    pad = filter_size // 2
    src = np.pad(np.arange(n), pad, mode="reflect")
    n_out = (n + 1) // 2
    m = np.zeros((n_out, n))
    for o in range(n_out):
        for t in range(filter_size):
            m[o, src[2 * o + t]] += taps[t]
    m = m.astype(dtype_str)
    m.flags.writeable = False
    return m


def blur_kernel(filter_size: int) -> np.ndarray:
    """Normalized 2-D binomial filter (outer product of the 1-D taps)."""
    if filter_size not in BINOMIAL:
        raise ValueError(f"unsupported AADS filter_size {filter_size}; use 3 or 5")
    t = BINOMIAL[filter_size]
    k = np.outer(t, t)
    return k / k.sum()


def aads_downsample(x: Tensor, filter_size: int = 3) -> Tensor:
    """Fixed binomial low-pass filter followed by stride-2 subsampling.

    Reflection padding keeps the output at ``ceil(H/2) x ceil(W/2)``. The
    filter is separable, so the whole op is two fixed matrix products.
    """
    if filter_size not in BINOMIAL:
        raise ValueError(f"unsupported AADS filter_size {filter_size}; use 3 or 5")
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"aads_downsample needs H, W >= 2, got {h}x{w}", dim="H" if h < 2 else "W")
    dt = x.dtype.str
    return ops.separable_linear(x, _aads_matrix(h, filter_size, dt), _aads_matrix(w, filter_size, dt))


# --------------------------------------------------------------------------
# attention condenser


@dataclass
class AttentionCondenserParams(_Params):
    embed_dw_w: Tensor    # [C,1,3,3]
    embed_dw_b: Tensor    # [C]
    embed_pw_w: Tensor    # [E,C,1,1]
    embed_pw_b: Tensor    # [E]
    expand_w: Tensor      # [C,E,1,1]
    expand_b: Tensor      # [C]
    scale: Tensor         # [C] per-channel S
    residual: bool = True

    @property
    def channels(self) -> int:
        return self.scale.shape[0]

    @property
    def embed_channels(self) -> int:
        return self.embed_pw_w.shape[0]

    @classmethod
    def init(cls, channels: int, embed_channels: int, rng: np.random.Generator,
             dtype=np.float32, residual: bool = True):
        c, e = channels, embed_channels
        return cls(
            embed_dw_w=he_normal(rng, (c, 1, 3, 3), 9, dtype),
            embed_dw_b=zeros((c,), dtype),
            embed_pw_w=he_normal(rng, (e, c, 1, 1), c, dtype),
            embed_pw_b=zeros((e,), dtype),
            expand_w=he_normal(rng, (c, e, 1, 1), e, dtype),
            expand_b=zeros((c,), dtype),
            scale=ones((c,), dtype),
            residual=residual,
        )


def attention_condenser(x: Tensor, p: AttentionCondenserParams) -> Tensor:
    """Self-attention gate from a spatially condensed embedding.

    condense: 2x2 max pool (ceil mode); embed: depthwise 3x3 + pointwise to
    the embedding width + relu; expand: pointwise back to C channels and
    nearest x2 upsample cropped to the input extent; A = sigmoid(expand).
    Output is ``x * (A * S) + x`` (or ``x * (A * S)`` without the residual).

    The expansion's pointwise conv runs before the upsample; the two commute
    exactly for nearest-neighbour upsampling and this order is 4x cheaper.
    """
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"attention_condenser needs H, W >= 2, got {h}x{w}", dim="H" if h < 2 else "W")
    if c != p.channels:
        raise ShapeError(f"condenser built for {p.channels} channels, input has {c}", dim="C")
    q = ops.max_pool(x, 2, 2, ceil_mode=True)
    q = ops.conv2d(q, p.embed_dw_w, p.embed_dw_b, stride=1, pad=1, groups=c)
    q = ops.relu(ops.conv2d(q, p.embed_pw_w, p.embed_pw_b))
    q = ops.conv2d(q, p.expand_w, p.expand_b)
    q = ops.upsample_nearest(q, 2, out_hw=(h, w))
    a = ops.sigmoid(q)
    gate = ops.mul(a, ops.reshape(p.scale, (1, c, 1, 1)))
    out = ops.mul(x, gate)
    return ops.add(out, x) if p.residual else out


# --------------------------------------------------------------------------
# depthwise-separable residual block


@dataclass
class ResBlockParams(_Params):
    dw_w: Tensor      # [C,1,3,3]
    bn1_gamma: Tensor
    bn1_beta: Tensor
    pw_w: Tensor      # [C,C,1,1]
    bn2_gamma: Tensor
    bn2_beta: Tensor
    bn1: BatchNormState = None
    bn2: BatchNormState = None

    @property
    def channels(self) -> int:
        return self.dw_w.shape[0]

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, dtype=np.float32):
        c = channels
        return cls(
            dw_w=he_normal(rng, (c, 1, 3, 3), 9, dtype),
            bn1_gamma=ones((c,), dtype), bn1_beta=zeros((c,), dtype),
            pw_w=he_normal(rng, (c, c, 1, 1), c, dtype),
            bn2_gamma=ones((c,), dtype), bn2_beta=zeros((c,), dtype),
            bn1=BatchNormState.fresh(c, dtype), bn2=BatchNormState.fresh(c, dtype),
        )


def dwsep_residual_block(x: Tensor, p: ResBlockParams, training: bool = False) -> Tensor:
    """``x + BN(pointwise(relu(BN(depthwise3x3(x)))))``, stride 1."""
    c = x.shape[1]
    if c != p.channels:
        raise ShapeError(f"residual block built for {p.channels} channels, input has {c}", dim="C")
    y = ops.conv2d(x, p.dw_w, None, stride=1, pad=1, groups=c)
    y = ops.relu(ops.batchnorm2d(y, p.bn1_gamma, p.bn1_beta, p.bn1, training))
    y = ops.conv2d(y, p.pw_w, None)
    y = ops.batchnorm2d(y, p.bn2_gamma, p.bn2_beta, p.bn2, training)
    return ops.add(x, y)


# --------------------------------------------------------------------------
# dual-softmax head


@dataclass
class DualHeadParams(_Params):
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def num_classes(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def init(cls, in_features: int, num_classes: int, rng: np.random.Generator, dtype=np.float32):
        return cls(
            w1=he_normal(rng, (num_classes, in_features), in_features, dtype),
            b1=zeros((num_classes,), dtype),
            w2=he_normal(rng, (num_classes, in_features), in_features, dtype),
            b2=zeros((num_classes,), dtype),
        )


class HeadOutput(NamedTuple):
    p1: Tensor
    p2: Tensor
    agg: Tensor


def dual_head_forward(features: Tensor, p: DualHeadParams) -> HeadOutput:
    """Two independent FC+softmax columns and their mean probability row."""
    if features.ndim != 2:
        features = ops.flatten(features)
    p1 = ops.softmax(ops.fully_connected(features, p.w1, p.b1))
    p2 = ops.softmax(ops.fully_connected(features, p.w2, p.b2))
    agg = ops.scale(ops.add(p1, p2), 0.5)
    return HeadOutput(p1, p2, agg)
