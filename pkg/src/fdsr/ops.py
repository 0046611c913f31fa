"""Differentiable tensor operations and resampling kernels.

All spatial operations use (batch, channels, height, width) layout. Elementwise
operations require identical shapes; there is no implicit broadcasting.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .tensor import Tensor, record


def _check_4d(x: Tensor, what: str) -> None:
    if x.data.ndim != 4:
        raise ValueError(f"{what} expects a 4-D (B, C, H, W) tensor, got shape {x.shape}")


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


# Callbacks receiving (op_name, boolean sign pattern) from piecewise-linear
# ops; used by the gradient checker to detect probes that cross a kink.
_kink_observers: list = []


def _observe_kink(op: str, pattern: np.ndarray) -> None:
    for cb in _kink_observers:
        cb(op, pattern)


def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """2-D cross-correlation with zero padding, stride and dilation."""
    _check_4d(x, "conv2d input")
    if weight.data.ndim != 4:
        raise ValueError(f"conv2d weight must be (outC, inC, kH, kW), got {weight.shape}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} dilation={dilation} padding={padding}")
    B, C, H, W = x.shape
    O, Ci, kh, kw = weight.shape
    if C != Ci:
        raise ValueError(f"conv2d: input has {C} channels but weight expects {Ci}")
    if bias is not None and bias.shape != (O,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {O} output channels")
    Ho = conv_output_size(H, kh, stride, padding, dilation)
    Wo = conv_output_size(W, kw, stride, padding, dilation)
    if Ho <= 0 or Wo <= 0:
        raise ValueError(
            f"conv2d: empty output for input {H}x{W}, kernel {kh}x{kw}, "
            f"padding {padding}, dilation {dilation}, stride {stride}"
        )

    xd, wd = x.data, weight.data
    L = Ho * Wo
    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = xd.reshape(B, C, L)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        cols6 = np.empty((B, C, kh, kw, Ho, Wo), dtype=xd.dtype)
        hspan = stride * (Ho - 1) + 1
        wspan = stride * (Wo - 1) + 1
        for i in range(kh):
            for j in range(kw):
                r0, c0 = i * dilation, j * dilation
                cols6[:, :, i, j] = xp[:, :, r0:r0 + hspan:stride, c0:c0 + wspan:stride]
        cols = cols6.reshape(B, C * kh * kw, L)
    w2 = wd.reshape(O, C * kh * kw)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data.reshape(1, O, 1)
    out = out.reshape(B, O, Ho, Wo)

    def _backward(g: np.ndarray):
        g2 = g.reshape(B, O, L)
        gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(wd.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2)
            if pointwise:
                gx = gcols.reshape(B, C, H, W)
            else:
                gcols = gcols.reshape(B, C, kh, kw, Ho, Wo)
                gxp = np.zeros((B, C, H + 2 * padding, W + 2 * padding), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        r0, c0 = i * dilation, j * dilation
                        gxp[:, :, r0:r0 + hspan:stride, c0:c0 + wspan:stride] += gcols[:, :, i, j]
                gx = gxp[:, :, padding:padding + H, padding:padding + W]
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(out, inputs, "conv2d", _backward)


def avg_pool2(x: Tensor) -> Tensor:
    """Mean over non-overlapping 2x2 blocks."""
    _check_4d(x, "avg_pool2")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"avg_pool2 needs even spatial size, got {H}x{W}")
    d = x.data
    # pairwise order keeps the upsample round trip exact
    out = ((d[:, :, 0::2, 0::2] + d[:, :, 0::2, 1::2]) + (d[:, :, 1::2, 0::2] + d[:, :, 1::2, 1::2])) * d.dtype.type(0.25)

    def _backward(g: np.ndarray):
        q = g * g.dtype.type(0.25)
        return (np.repeat(np.repeat(q, 2, axis=2), 2, axis=3),)

    return record(out, (x,), "avg_pool2", _backward)


def nearest_upsample2(x: Tensor) -> Tensor:
    """Replicate every pixel into a 2x2 block."""
    _check_4d(x, "nearest_upsample2")
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def _backward(g: np.ndarray):
        return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return record(out, (x,), "nearest_upsample2", _backward)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: out[b, c, r*i+di, r*j+dj] = in[b, c*r*r + di*r + dj, i, j]."""
    _check_4d(x, "pixel_shuffle")
    B, C, H, W = x.shape
    if r < 1 or C % (r * r):
        raise ValueError(f"pixel_shuffle: {C} channels not divisible by r^2 = {r * r}")
    Co = C // (r * r)
    out = x.data.reshape(B, Co, r, r, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(B, Co, H * r, W * r)

    def _backward(g: np.ndarray):
        return (g.reshape(B, Co, H, r, W, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, C, H, W),)

    return record(out, (x,), "pixel_shuffle", _backward)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth, the exact inverse of :func:`pixel_shuffle`."""
    _check_4d(x, "pixel_unshuffle")
    B, C, H, W = x.shape
    if r < 1 or H % r or W % r:
        raise ValueError(f"pixel_unshuffle: spatial size {H}x{W} not divisible by r = {r}")
    h, w = H // r, W // r
    out = x.data.reshape(B, C, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, C * r * r, h, w)

    def _backward(g: np.ndarray):
        return (g.reshape(B, C, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(B, C, H, W),)

    return record(out, (x,), "pixel_unshuffle", _backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _check_4d(a, "concat_channels")
    _check_4d(b, "concat_channels")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def _backward(g: np.ndarray):
        return g[:, :ca], g[:, ca:]

    return record(out, (a, b), "concat_channels", _backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _check_4d(x, "slice_channels")
    C = x.shape[1]
    if not 0 <= start <= stop <= C:
        raise ValueError(f"slice_channels: [{start}, {stop}) out of range for {C} channels")
    out = x.data[:, start:stop].copy()

    def _backward(g: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return record(out, (x,), "slice_channels", _backward)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    d = x.data
    pos = d >= 0
    if _kink_observers:
        _observe_kink("leaky_relu", pos)
    s = d.dtype.type(slope)
    out = np.where(pos, d, d * s)

    def _backward(g: np.ndarray):
        return (np.where(pos, g, g * s),)

    return record(out, (x,), "leaky_relu", _backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return record(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return record(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), "mul", lambda g: (g * bd, g * ad))


def scalar_mul(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return record(x.data * c, (x,), "scalar_mul", lambda g: (g * c,))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors the tensor vocabulary
    """Sum of all elements, returned with every axis kept at size 1."""
    shape = x.shape
    out = np.asarray(x.data.sum(dtype=x.data.dtype)).reshape((1,) * x.data.ndim)

    def _backward(g: np.ndarray):
        return (np.broadcast_to(g.reshape(()), shape).copy(),)

    return record(out, (x,), "sum", _backward)


def abs(x: Tensor) -> Tensor:  # noqa: A001
    d = x.data
    sign = np.sign(d)
    if _kink_observers:
        _observe_kink("abs", sign)
    return record(np.abs(d), (x,), "abs", lambda g: (g * sign,))


# --------------------------------------------------------------------------
# bicubic resampling (input preparation only; never recorded on a tape)

CUBIC_A = -0.5


def cubic_kernel(t: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def cubic_taps(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Edge-clamped source indices (n_out, 4) and weights (n_out, 4), half-pixel centres."""
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    base = np.floor(src)
    t = src - base
    offsets = np.arange(-1, 3)
    idx = np.clip(base[:, None].astype(np.int64) + offsets[None, :], 0, n_in - 1)
    w = cubic_kernel(t[:, None] - offsets[None, :])
    return idx, w


def _resize_axis(a: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = a.shape[axis]
    if n_in == n_out:
        return a
    idx, w = cubic_taps(n_in, n_out)
    a = np.moveaxis(a, axis, -1)
    taps = a[..., idx]  # (..., n_out, 4)
    ref = taps[..., 1:2]
    # anchored form: constants stay exact because every difference is zero
    out = ref[..., 0] + ((taps - ref) * w.astype(a.dtype)).sum(axis=-1)
    return np.moveaxis(out, -1, axis)


def bicubic_resize_array(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize the last two axes of ``a`` with the a=-0.5 cubic kernel."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bicubic_resize: target size must be positive, got {out_h}x{out_w}")
    out = _resize_axis(a, out_h, a.ndim - 2)
    return _resize_axis(out, out_w, a.ndim - 1)


def bicubic_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    _check_4d(x, "bicubic_resize")
    return Tensor(bicubic_resize_array(x.data, out_h, out_w).astype(x.dtype, copy=False))
