"""Differentiable operations for the volumetric transformer stack.

Every op computes its forward result eagerly with numpy and records an
adjoint closure via :func:`apply_op`. Convolutions are lowered to
im2col-style contractions; trilinear upsampling is expressed as per-axis
interpolation matrices so the backward pass is an exact transpose.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from ..errors import ShapeMismatch
from .rng import RngState
from .tensor import Tensor, apply_op

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def adjoint(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return apply_op(out, (a, b), adjoint)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def adjoint(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return apply_op(out, (a, b), adjoint)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    ad, bd = a.data, b.data

    def adjoint(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return apply_op(out, (a, b), adjoint)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def adjoint(g):
        return (g * s,)

    return apply_op(a.data * np.asarray(s, dtype=a.dtype), (a,), adjoint)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def adjoint(g):
        return (g * sign,)

    return apply_op(np.abs(a.data), (a,), adjoint)


def broadcast_to(a: Tensor, shape: tuple) -> Tensor:
    out = np.broadcast_to(a.data, shape).copy()

    def adjoint(g):
        return (_unbroadcast(g, a.shape),)

    return apply_op(out, (a,), adjoint)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    # derivative at exactly 0 is defined to be the slope
    dmask = np.where(a.data > 0, a.dtype.type(1.0), a.dtype.type(slope))

    def adjoint(g):
        return (g * dmask,)

    return apply_op(a.data * dmask, (a,), adjoint)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = (x * cdf).astype(a.dtype)
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    deriv = (cdf + x * pdf).astype(a.dtype)

    def adjoint(g):
        return (g * deriv,)

    return apply_op(out, (a,), adjoint)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def adjoint(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return apply_op(y, (a,), adjoint)


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - logz
    y = np.exp(out)

    def adjoint(g):
        return (g - y * g.sum(axis=-1, keepdims=True),)

    return apply_op(out, (a,), adjoint)


def dropout(a: Tensor, p: float, rng: Optional[RngState] = None, train: bool = True) -> Tensor:
    """Inverted dropout; identity when ``p == 0`` or not training."""
    if not train or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout with p > 0 requires an RngState")
    keep = (rng.uniform(a.shape) >= p).astype(a.dtype)
    factor = a.dtype.type(1.0 / (1.0 - p))
    mask = keep * factor

    def adjoint(g):
        return (g * mask,)

    return apply_op(a.data * mask, (a,), adjoint)


# ---------------------------------------------------------------------------
# reductions and views
# ---------------------------------------------------------------------------

def _restore_axes(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def adjoint(g):
        return (_restore_axes(g, shape, axis, keepdims),)

    return apply_op(out, (a,), adjoint)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.shape
    count = a.size // max(out.size, 1)

    def adjoint(g):
        return (_restore_axes(g, shape, axis, keepdims) / count,)

    return apply_op(out, (a,), adjoint)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def adjoint(g):
        return (g.reshape(old),)

    return apply_op(a.data.reshape(shape), (a,), adjoint)


def flatten(a: Tensor) -> Tensor:
    """Flatten all but the leading (batch) axis."""
    return reshape(a, (a.shape[0], -1))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def adjoint(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return apply_op(np.ascontiguousarray(a.data.transpose(axes)), (a,), adjoint)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def adjoint(g):
        return tuple(
            np.ascontiguousarray(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis))
            for i in range(len(sizes))
        )

    return apply_op(out, tuple(tensors), adjoint)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = a.shape

    def adjoint(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return apply_op(a.data[idx].copy(), (a,), adjoint)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batch dimensions must match exactly."""
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def adjoint(g):
        return g @ bd.swapaxes(-1, -2), ad.swapaxes(-1, -2) @ g

    return apply_op(ad @ bd, (a, b), adjoint)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: y = x @ w.T + b with w of shape (out, in)."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeMismatch(f"linear: input width {x.shape[-1]} vs weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    xd, wd = x.data, w.data
    inputs = (x, w) if b is None else (x, w, b)

    def adjoint(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd
        gw = g2.T @ xd.reshape(-1, xd.shape[-1])
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return apply_op(out, inputs, adjoint)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _pad_spatial(x: np.ndarray, padding: int, nd: int) -> np.ndarray:
    if padding == 0:
        return x
    shape = x.shape[:2] + tuple(s + 2 * padding for s in x.shape[2:])
    out = np.zeros(shape, dtype=x.dtype)
    core = (slice(None), slice(None)) + (slice(padding, -padding),) * nd
    out[core] = x
    return out


def _im2col(xp: np.ndarray, ksizes: tuple, stride: int, nd: int) -> np.ndarray:
    """Contiguous (N, Cin*prod(k), prod(out)) patch matrix from padded input."""
    view = sliding_window_view(xp, ksizes, axis=tuple(range(2, 2 + nd)))
    if stride > 1:
        view = view[(slice(None), slice(None)) + (slice(None, None, stride),) * nd]
    # (N, C, *out, *k) -> (N, C, *k, *out) so the GEMM axis is C*prod(k)
    perm = (0, 1) + tuple(range(2 + nd, 2 + 2 * nd)) + tuple(range(2, 2 + nd))
    n, c = xp.shape[:2]
    cols = np.ascontiguousarray(view.transpose(perm))
    return cols.reshape(n, c * int(np.prod(ksizes)), -1)


def _conv_nd(x: Tensor, w: Tensor, b: Optional[Tensor], stride: int, padding: int, nd: int) -> Tensor:
    if x.ndim != nd + 2 or w.ndim != nd + 2:
        raise ShapeMismatch(f"conv{nd}d expects {nd + 2}-d input and weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv{nd}d channel mismatch: input {x.shape[1]} vs weight {w.shape[1]}")
    ksizes = w.shape[2:]
    n, cin = x.shape[:2]
    cout = w.shape[0]
    spatial = x.shape[2:]
    out_sp = tuple((s + 2 * padding - k) // stride + 1 for s, k in zip(spatial, ksizes))
    if any(o < 1 for o in out_sp):
        raise ShapeMismatch(f"conv{nd}d output would be empty: input {spatial}, kernel {ksizes}")

    if all(k == 1 for k in ksizes) and stride == 1 and padding == 0:
        return _conv_pointwise(x, w, b, nd)

    xp = _pad_spatial(x.data, padding, nd)
    cols = _im2col(xp, ksizes, stride, nd)  # (N, cin*K, P)
    w_mat = w.data.reshape(cout, -1)
    out = np.matmul(w_mat, cols).reshape((n, cout) + out_sp)
    if b is not None:
        out = out + b.data.reshape((1, cout) + (1,) * nd)

    xp_shape = xp.shape
    inputs = (x, w) if b is None else (x, w, b)

    def adjoint(g):
        gmat = g.reshape(n, cout, -1)
        gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if stride == 1 and ksizes[0] - 1 - padding >= 0:
            # input grad as a full correlation with the flipped kernel: one GEMM
            flip = (slice(None), slice(None)) + (slice(None, None, -1),) * nd
            w_flip = np.ascontiguousarray(
                w.data[flip].swapaxes(0, 1).astype(g.dtype)).reshape(cin, -1)
            gpad = _pad_spatial(g, ksizes[0] - 1 - padding, nd)
            gx = np.matmul(w_flip, _im2col(gpad, ksizes, 1, nd)).reshape((n, cin) + spatial)
        else:
            gcols = np.matmul(w_mat.T.astype(g.dtype), gmat)
            gcols = gcols.reshape((n, cin) + ksizes + out_sp)
            gxp = np.zeros(xp_shape, dtype=g.dtype)
            for off in np.ndindex(*ksizes):
                sl = tuple(slice(o, o + stride * e, stride) for o, e in zip(off, out_sp))
                gxp[(slice(None), slice(None)) + sl] += gcols[(slice(None), slice(None)) + off]
            if padding > 0:
                core = tuple(slice(padding, padding + s) for s in spatial)
                gx = np.ascontiguousarray(gxp[(slice(None), slice(None)) + core])
            else:
                gx = gxp
        if b is None:
            return gx, gw
        gb = g.sum(axis=(0,) + tuple(range(2, 2 + nd)))
        return gx, gw, gb

    return apply_op(out, inputs, adjoint)


def _conv_pointwise(x: Tensor, w: Tensor, b: Optional[Tensor], nd: int) -> Tensor:
    n, cin = x.shape[:2]
    sp = x.shape[2:]
    cout = w.shape[0]
    w2 = w.data.reshape(cout, cin)
    xmat = x.data.reshape(n, cin, -1)
    out = np.matmul(w2, xmat)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1)
    inputs = (x, w) if b is None else (x, w, b)

    def adjoint(g):
        gmat = g.reshape(n, cout, -1)
        gx = np.matmul(w2.T.astype(g.dtype), gmat).reshape((n, cin) + sp)
        gw = np.tensordot(gmat, xmat, axes=([0, 2], [0, 2])).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, gmat.sum(axis=(0, 2))

    return apply_op(out.reshape((n, cout) + sp), inputs, adjoint)


def conv3d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """3-D convolution over (N, C, W, H, D) with a cubic odd-sized kernel."""
    if stride not in (1, 2):
        raise ValueError(f"conv3d stride must be 1 or 2, got {stride}")
    if w.ndim == 5 and w.shape[2] % 2 == 0:
        raise ValueError(f"conv3d kernel extent must be odd, got {w.shape[2]}")
    return _conv_nd(x, w, b, stride, padding, 3)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution over (N, C, H, W); used by the frozen perceptual stack."""
    return _conv_nd(x, w, b, stride, padding, 2)


# ---------------------------------------------------------------------------
# trilinear upsampling
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _interp_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Linear-interpolation matrix (out, in), corner samples at cell centers."""
    o = np.arange(out_size, dtype=np.float64)
    src = (o + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, in_size - 1)
    frac = src - i0
    m = np.zeros((out_size, in_size), dtype=np.float64)
    np.add.at(m, (np.arange(out_size), i0), 1.0 - frac)
    np.add.at(m, (np.arange(out_size), i1), frac)
    return m


def _apply_axis(arr: np.ndarray, m: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(arr, axis, -1)
    res = moved @ m.T.astype(arr.dtype)
    return np.moveaxis(res, -1, axis)


def upsample_to(x: Tensor, target: tuple) -> Tensor:
    """Trilinear resize of (N, C, W, H, D) to exact target spatial extents."""
    if x.ndim != 5:
        raise ShapeMismatch(f"upsample_to expects a 5-d tensor, got {x.shape}")
    src_sp = x.shape[2:]
    if len(target) != 3:
        raise ShapeMismatch(f"target must have 3 extents, got {target}")
    if any(t < s for t, s in zip(target, src_sp)):
        raise ShapeMismatch(f"target {target} smaller than input {src_sp}")
    mats = [_interp_matrix(s, t) for s, t in zip(src_sp, target)]
    out = x.data
    for ax, m in enumerate(mats):
        out = _apply_axis(out, m, ax + 2)

    def adjoint(g):
        gx = g
        for ax, m in reversed(list(enumerate(mats))):
            gx = np.moveaxis(np.moveaxis(gx, ax + 2, -1) @ m.astype(g.dtype), -1, ax + 2)
        return (np.ascontiguousarray(gx),)

    return apply_op(np.ascontiguousarray(out), (x,), adjoint)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def group_norm(x: Tensor, num_groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if x.ndim < 2:
        raise ShapeMismatch(f"group_norm expects (N, C, ...), got {x.shape}")
    n, c = x.shape[:2]
    if c % num_groups != 0:
        raise ShapeMismatch(f"channels {c} not divisible by {num_groups} groups")
    sp = x.shape[2:]
    xg = x.data.reshape(n, num_groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    var = xg.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat_g = (xg - mu) * inv
    xhat = xhat_g.reshape(x.shape)
    gshape = (1, c) + (1,) * len(sp)
    out = xhat * gamma.data.reshape(gshape) + beta.data.reshape(gshape)
    gdat = gamma.data

    def adjoint(g):
        reduce_axes = (0,) + tuple(range(2, 2 + len(sp)))
        dgamma = (g * xhat).sum(axis=reduce_axes).reshape(gamma.shape)
        dbeta = g.sum(axis=reduce_axes).reshape(beta.shape)
        dxhat = (g * gdat.reshape(gshape)).reshape(n, num_groups, -1)
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat_g).mean(axis=-1, keepdims=True)
        dx = ((dxhat - m1 - xhat_g * m2) * inv).reshape(x.shape)
        return dx, dgamma, dbeta

    return apply_op(out, (x, gamma, beta), adjoint)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with per-feature affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    gdat = gamma.data

    def adjoint(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gdat
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        return dx, dgamma, dbeta

    return apply_op(out, (x, gamma, beta), adjoint)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def multi_head_attention(
    seq: Tensor,
    params: dict,
    heads: int,
    dropout_p: float = 0.0,
    rng: Optional[RngState] = None,
    train: bool = False,
    return_weights: bool = False,
):
    """Scaled dot-product attention with ``heads`` heads over (N, L, d).

    ``params`` holds Tensors wq, bq, wk, bk, wv, bv, wo, bo with (d, d)
    projection weights.
    """
    n, length, d = seq.shape
    if d % heads != 0:
        raise ShapeMismatch(f"model width {d} not divisible by {heads} heads")
    dk = d // heads

    def split(t: Tensor) -> Tensor:
        t = reshape(t, (n, length, heads, dk))
        t = transpose(t, (0, 2, 1, 3))
        return reshape(t, (n * heads, length, dk))

    q = split(linear(seq, params["wq"], params["bq"]))
    k = split(linear(seq, params["wk"], params["bk"]))
    v = split(linear(seq, params["wv"], params["bv"]))

    scores = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dk))
    attn = softmax(scores)
    attn_d = dropout(attn, dropout_p, rng, train)
    ctx = matmul(attn_d, v)
    ctx = reshape(ctx, (n, heads, length, dk))
    ctx = transpose(ctx, (0, 2, 1, 3))
    ctx = reshape(ctx, (n, length, d))
    out = linear(ctx, params["wo"], params["bo"])
    if return_weights:
        return out, attn
    return out
