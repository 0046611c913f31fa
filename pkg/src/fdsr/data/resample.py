"""Depth-aware resampling between HR and LR grids."""

from __future__ import annotations

import numpy as np

from ..ops import cubic_taps

# renormalised support weight below which the output is treated as a hole
MIN_SUPPORT = 1e-6


def _check_divisible(shape, s: int) -> None:
    if s < 1 or shape[0] % s or shape[1] % s:
        raise ValueError(f"size {shape[0]}x{shape[1]} not divisible by scale {s}")


def to_mm(depth_m: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(depth_m, dtype=np.float64) * 1000.0), 0, 65535).astype(np.uint16)


def to_m(depth_mm: np.ndarray) -> np.ndarray:
    return np.asarray(depth_mm, dtype=np.float64) / 1000.0


def _axis_matrix(n_in: int, n_out: int) -> np.ndarray:
    idx, w = cubic_taps(n_in, n_out)
    m = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), 4)
    np.add.at(m, (rows, idx.ravel()), w.ravel())
    return m


def bicubic_downsample_depth(hr: np.ndarray, s: int) -> np.ndarray:
    """Bicubic ``1/s`` resize of a uint16 depth map that ignores hole pixels.

    Kernel weights over valid pixels are renormalised to sum to one; outputs
    whose valid support weight is not positive become holes. Rounded to mm.
    """
    hr = np.asarray(hr)
    _check_divisible(hr.shape, s)
    if s == 1:
        return hr.astype(np.uint16, copy=True)
    h, w = hr.shape[0] // s, hr.shape[1] // s
    my = _axis_matrix(hr.shape[0], h)
    mx = _axis_matrix(hr.shape[1], w)
    valid = (hr > 0).astype(np.float64)
    vals = hr.astype(np.float64) * valid
    num = my @ vals @ mx.T
    den = my @ valid @ mx.T
    ok = den > MIN_SUPPORT
    out = np.zeros((h, w))
    out[ok] = num[ok] / den[ok]
    res = np.clip(np.rint(out), 0, 65535).astype(np.uint16)
    # a supported output must not collapse onto the hole sentinel
    res[ok & (res == 0)] = 1
    return res


def box_downsample(a: np.ndarray, s: int) -> np.ndarray:
    """Mean over s x s blocks of the first two axes (float64)."""
    a = np.asarray(a, dtype=np.float64)
    _check_divisible(a.shape, s)
    h, w = a.shape[0] // s, a.shape[1] // s
    return a.reshape(h, s, w, s, *a.shape[2:]).mean(axis=(1, 3))


def box_downsample_depth(hr: np.ndarray, s: int) -> np.ndarray:
    return np.clip(np.rint(box_downsample(hr, s)), 0, 65535).astype(np.uint16)


def box_downsample_rgb(rgb: np.ndarray, s: int) -> np.ndarray:
    return np.clip(np.rint(box_downsample(rgb, s)), 0, 255).astype(np.uint8)
