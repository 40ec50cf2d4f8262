"""Differentiable primitives.

Every function takes and returns :class:`Tensor` values. When an input is
tracked by a tape, the result is recorded together with a vector-Jacobian
product closure. Convolution is cross-correlation with stride 1 and "same"
padding; no op changes spatial size except :func:`pixel_shuffle`.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, Tensor, as_tensor, record


def _need_rank4(op, x):
    if x.ndim != 4:
        raise DimensionError(f"{op}: expected a rank-4 (n, c, h, w) tensor, got shape {x.shape}")


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- convolution -------------------------------------------------------------

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Channels-last patches of an NCHW array: ``(n*h*w, k*k*c)``, zero padded."""
    n, c, h, w = x.shape
    pad = (k - 1) // 2
    xn = x.transpose(0, 2, 3, 1)
    if k == 1:
        return np.ascontiguousarray(xn).reshape(n * h * w, c)
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + w] = xn
    cols = np.empty((n, h, w, k * k, c), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, :, di * k + dj] = xp[:, di:di + h, dj:dj + w]
    return cols.reshape(n * h * w, k * k * c)


def conv2d(x, weight, bias=None, padding: Optional[int] = None) -> Tensor:
    """Cross-correlate ``x`` with ``weight`` of shape ``(c_out, c_in, k, k)``.

    ``k`` must be 1 or 3 and ``padding`` (k - 1) / 2 so the output keeps the
    input's height and width. ``bias`` is a length ``c_out`` vector or None.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _need_rank4("conv2d", x)
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"conv2d: weight must be (c_out, c_in, k, k), got {weight.shape}")
    c_out, c_in, k, _ = weight.shape
    if x.shape[1] != c_in:
        raise DimensionError(f"conv2d: input {x.shape} has {x.shape[1]} channels, weight {weight.shape} expects {c_in}")
    if k not in (1, 3):
        raise DimensionError(f"conv2d: kernel size must be 1 or 3, got {k}")
    pad = (k - 1) // 2
    if padding is not None and padding != pad:
        raise DimensionError(f"conv2d: padding must be {pad} for a {k}x{k} kernel, got {padding}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} does not match c_out={c_out}")

    n, _, h, w = x.shape
    cols = _im2col(x.data, k)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(c_out, -1)  # taps ordered (di, dj, c)
    out2 = cols @ wmat.T
    if bias is not None:
        out2 += bias.data
    out = np.ascontiguousarray(out2.reshape(n, h, w, c_out).transpose(0, 3, 1, 2))

    def vjp(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, c_out)
        gw = (g2.T @ cols).reshape(c_out, k, k, c_in).transpose(0, 3, 1, 2)
        gb = g2.sum(axis=0) if bias is not None else None
        if k == 1:
            gxn = (g2 @ wmat).reshape(n, h, w, c_in)
        else:
            # scatter one tap at a time; taps are summed in a fixed order
            taps = np.ascontiguousarray(weight.data.transpose(2, 3, 0, 1))
            gxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c_in), dtype=g.dtype)
            for di in range(k):
                for dj in range(k):
                    gxp[:, di:di + h, dj:dj + w] += (g2 @ taps[di, dj]).reshape(n, h, w, c_in)
            gxn = gxp[:, pad:pad + h, pad:pad + w]
        return np.ascontiguousarray(gxn.transpose(0, 3, 1, 2)), np.ascontiguousarray(gw), gb

    inputs = [x, weight] + ([bias] if bias is not None else [])
    return record("conv2d", inputs, out, vjp)


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return record("add", [a, b], a.data + b.data, lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return record("sub", [a, b], a.data - b.data, lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return record("mul", [a, b], ad * bd, lambda g: (g * bd, g * ad))


def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    f = x.dtype.type(factor)
    return record("scale", [x], x.data * f, lambda g: (g * f,))


def mul_channelwise(u, alpha) -> Tensor:
    """Scale each channel of ``u`` by ``alpha``.

    ``alpha`` is ``(n, c, 1, 1)`` (one gate per sample) or ``(1, c, 1, 1)``.
    """
    u, alpha = as_tensor(u), as_tensor(alpha)
    _need_rank4("mul_channelwise", u)
    n, c = u.shape[:2]
    if alpha.shape not in ((n, c, 1, 1), (1, c, 1, 1)):
        raise DimensionError(f"mul_channelwise: gate shape {alpha.shape} does not fit input {u.shape}")
    ud, ad = u.data, alpha.data

    def vjp(g):
        ga = (g * ud).sum(axis=(2, 3), keepdims=True)
        if ad.shape[0] != n:
            ga = ga.sum(axis=0, keepdims=True)
        return g * ad, ga

    return record("mul_channelwise", [u, alpha], ud * ad, vjp)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record("relu", [x], np.where(mask, x.data, 0).astype(x.dtype), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return record("sigmoid", [x], out, lambda g: (g * out * (1 - out),))


# -- channel plumbing --------------------------------------------------------

def concat_channels(xs: Sequence) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise DimensionError("concat_channels: empty input list")
    for x in xs:
        _need_rank4("concat_channels", x)
        if (x.shape[0],) + x.shape[2:] != (xs[0].shape[0],) + xs[0].shape[2:]:
            raise DimensionError(f"concat_channels: shape mismatch {xs[0].shape} vs {x.shape}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])
    out = np.concatenate([x.data for x in xs], axis=1)

    def vjp(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return record("concat_channels", xs, out, vjp)


def slice_channels(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    _need_rank4("slice_channels", x)
    c = x.shape[1]
    if not 0 <= start < stop <= c:
        raise DimensionError(f"slice_channels: [{start}, {stop}) outside {c} channels")

    def vjp(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, start:stop] = g
        return (gx,)

    return record("slice_channels", [x], np.ascontiguousarray(x.data[:, start:stop]), vjp)


def global_avg_pool(u) -> Tensor:
    """Per-channel spatial mean, returned as ``(n, c, 1, 1)``."""
    u = as_tensor(u)
    _need_rank4("global_avg_pool", u)
    n, c, h, w = u.shape
    if h * w == 0:
        raise DimensionError(f"global_avg_pool: empty spatial extent in {u.shape}")
    out = u.data.mean(axis=(2, 3), keepdims=True)
    inv = u.dtype.type(1.0 / (h * w))
    return record("global_avg_pool", [u], out, lambda g: (np.broadcast_to(g * inv, u.shape).copy(),))


def channel_linear(z, weight) -> Tensor:
    """Apply a bias-free ``(c_out, c_in)`` matrix to a ``(n, c_in, 1, 1)`` descriptor."""
    z, weight = as_tensor(z), as_tensor(weight)
    _need_rank4("channel_linear", z)
    if weight.ndim != 2 or z.shape[1:] != (weight.shape[1], 1, 1):
        raise DimensionError(f"channel_linear: weight {weight.shape} does not fit descriptor {z.shape}")
    zd = z.data[:, :, 0, 0]
    wd = weight.data
    out = (zd @ wd.T)[:, :, None, None]

    def vjp(g):
        g2 = g[:, :, 0, 0]
        return (g2 @ wd)[:, :, None, None], g2.T @ zd

    return record("channel_linear", [z, weight], out, vjp)


def channel_conv1d(z, weight) -> Tensor:
    """1-d cross-correlation along the channel axis of a ``(n, c, 1, 1)`` descriptor.

    ``weight`` has odd length k; the channel axis is zero-padded by k // 2.
    """
    z, weight = as_tensor(z), as_tensor(weight)
    _need_rank4("channel_conv1d", z)
    if weight.ndim != 1 or weight.shape[0] % 2 == 0 or z.shape[2:] != (1, 1):
        raise DimensionError(f"channel_conv1d: bad weight {weight.shape} or descriptor {z.shape}")
    k = weight.shape[0]
    p = k // 2
    n, c = z.shape[:2]
    zp = np.pad(z.data[:, :, 0, 0], ((0, 0), (p, p)))
    win = sliding_window_view(zp, k, axis=1)  # n, c, k
    wd = weight.data
    out = (win @ wd)[:, :, None, None]

    def vjp(g):
        g2 = g[:, :, 0, 0]
        gw = np.einsum("nc,nck->k", g2, win)
        gzp = np.zeros((n, c + 2 * p), dtype=g.dtype)
        for t in range(k):
            gzp[:, t:t + c] += g2 * wd[t]
        return gzp[:, p:p + c][:, :, None, None], gw

    return record("channel_conv1d", [z, weight], out, vjp)


def pixel_shuffle(x, r: int) -> Tensor:
    """Rearrange ``(n, c*r*r, h, w)`` into ``(n, c, r*h, r*w)``.

    ``out[n, c, r*i + di, r*j + dj] = x[n, c*r*r + di*r + dj, i, j]``.
    """
    x = as_tensor(x)
    _need_rank4("pixel_shuffle", x)
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise DimensionError(f"pixel_shuffle: {c} channels not divisible by r^2={r * r}")
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def vjp(g):
        return (pixel_unshuffle_array(g, r),)

    return record("pixel_shuffle", [x], np.ascontiguousarray(out), vjp)


def pixel_unshuffle_array(y: np.ndarray, r: int) -> np.ndarray:
    """Inverse of :func:`pixel_shuffle` on raw arrays."""
    n, c, hr, wr = y.shape
    h, w = hr // r, wr // r
    return np.ascontiguousarray(y.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w))


# -- reparameterization and reductions ----------------------------------------

def weight_norm(v, g, eps: float = 1e-12) -> Tensor:
    """Effective kernel ``g * v / ||v||`` with the norm taken per output channel.

    ``v`` is ``(c_out, c_in, k, k)`` and ``g`` a length ``c_out`` vector.
    """
    v, g = as_tensor(v), as_tensor(g)
    if v.ndim != 4 or g.shape != (v.shape[0],):
        raise DimensionError(f"weight_norm: direction {v.shape} and gain {g.shape} disagree")
    vd, gd = v.data, g.data
    norm = np.sqrt((vd * vd).sum(axis=(1, 2, 3)))
    if (norm < eps).any():
        bad = int(np.argmin(norm))
        raise ValueError(f"weight_norm: direction for output channel {bad} has zero norm")
    unit = vd / norm[:, None, None, None]
    out = gd[:, None, None, None] * unit

    def vjp(gout):
        gg = (gout * unit).sum(axis=(1, 2, 3))
        gv = (gd / norm)[:, None, None, None] * (gout - unit * gg[:, None, None, None])
        return gv, gg

    return record("weight_norm", [v, g], out, vjp)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum(), dtype=x.dtype).reshape(1, 1, 1, 1)
    return record("sum", [x], out, lambda g: (np.full(x.shape, g.reshape(-1)[0], dtype=g.dtype),))


def l1_loss(sr, hr) -> Tensor:
    """Mean absolute error; the subgradient uses sign(0) = 0."""
    sr, hr = as_tensor(sr), as_tensor(hr)
    _same_shape("l1_loss", sr, hr)
    diff = sr.data - hr.data
    size = diff.size
    out = np.asarray(np.abs(diff).sum() / size, dtype=sr.dtype).reshape(1, 1, 1, 1)

    def vjp(g):
        gd = np.sign(diff) * (g.reshape(-1)[0] / size)
        return gd, -gd

    return record("l1_loss", [sr, hr], out, vjp)
