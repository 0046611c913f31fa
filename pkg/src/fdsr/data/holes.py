"""Colour-guided depth hole filling (colorization-style weighted least squares).

Each pixel should equal the affinity-weighted average of its 8 neighbours,
with affinities ``exp(-(I_p - I_q)^2 / (2 sigma_p^2))`` computed on the
grayscale guide (range [0, 1]) and normalised per pixel. ``sigma_p`` is the
intensity variance of the 3x3 window around ``p``, floored at
``SIGMA_FLOOR``; because the variance (not the standard deviation) is used,
weights across a strong edge are far smaller than within flat texture. Observed depths are fixed; hole
depths minimise the sum of squared residuals over every pixel, which gives an
SPD normal system solved by Jacobi-preconditioned conjugate gradients.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sp

from ..net import GRAY_COEFFS

# gray-level differences well below this count as texture, not edges
SIGMA_FLOOR = 1e-2
# most negative log-affinity kept, so weights stay strictly positive
LOG_WEIGHT_FLOOR = -30.0

OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


class SolverError(RuntimeError):
    pass


def gray_from_rgb(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = GRAY_COEFFS
    return r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]


def local_variance(gray: np.ndarray) -> np.ndarray:
    """Variance over the 3x3 window (clipped at borders)."""
    h, w = gray.shape
    s1 = np.zeros_like(gray)
    s2 = np.zeros_like(gray)
    n = np.zeros_like(gray)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            ys = slice(max(0, -dy), h - max(0, dy))
            xs = slice(max(0, -dx), w - max(0, dx))
            yq = slice(max(0, dy), h - max(0, -dy))
            xq = slice(max(0, dx), w - max(0, -dx))
            v = gray[yq, xq]
            s1[ys, xs] += v
            s2[ys, xs] += v * v
            n[ys, xs] += 1
    mean = s1 / n
    return np.maximum(s2 / n - mean * mean, 0.0)


def sigma_map(gray: np.ndarray) -> np.ndarray:
    """Per-pixel affinity scale: local variance floored at ``SIGMA_FLOOR``."""
    return np.maximum(local_variance(gray), SIGMA_FLOOR)


def affinity_matrix(gray: np.ndarray) -> sp.csr_matrix:
    """Row-normalised 8-neighbour affinity matrix W (n x n, row-major pixel order)."""
    gray = np.asarray(gray, dtype=np.float64)
    h, w = gray.shape
    sigma = sigma_map(gray)
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, logw = [], [], []
    for dy, dx in OFFSETS:
        ys = slice(max(0, -dy), h - max(0, dy))
        xs = slice(max(0, -dx), w - max(0, dx))
        yq = slice(max(0, dy), h - max(0, -dy))
        xq = slice(max(0, dx), w - max(0, -dx))
        diff = gray[ys, xs] - gray[yq, xq]
        rows.append(idx[ys, xs].ravel())
        cols.append(idx[yq, xq].ravel())
        logw.append((-(diff * diff) / (2.0 * sigma[ys, xs] ** 2)).ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    logw = np.concatenate(logw)
    row_max = np.full(h * w, -np.inf)
    np.maximum.at(row_max, rows, logw)
    wts = np.exp(np.maximum(logw - row_max[rows], LOG_WEIGHT_FLOOR))
    row_sum = np.bincount(rows, weights=wts, minlength=h * w)
    wts = wts / row_sum[rows]
    return sp.csr_matrix((wts, (rows, cols)), shape=(h * w, h * w))


def build_system(depth_m: np.ndarray, known: np.ndarray, gray: np.ndarray):
    """Normal equations ``A x = b`` over the hole pixels (``A`` sparse SPD)."""
    n = depth_m.size
    L = (sp.identity(n, format="csr") - affinity_matrix(gray)).tocsc()
    known = known.ravel()
    holes = np.flatnonzero(~known)
    fixed = np.flatnonzero(known)
    Lu = L[:, holes]
    Lk = L[:, fixed]
    A = (Lu.T @ Lu).tocsr()
    b = -(Lu.T @ (Lk @ depth_m.ravel()[fixed]))
    return A, b, holes


def pcg(A, b: np.ndarray, x0: Optional[np.ndarray] = None, tol: float = 1e-10, maxiter: Optional[int] = None):
    """Jacobi-preconditioned conjugate gradients; returns ``(x, iterations, rel_residual)``."""
    n = b.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else x0.astype(np.float64).copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        bnorm = 1.0
    r = b - A @ x
    rel = np.linalg.norm(r) / bnorm
    if rel < tol:
        return x, 0, rel
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        step = rz / (p @ Ap)
        x += step * p
        r -= step * Ap
        rel = np.linalg.norm(r) / bnorm
        if rel < tol:
            return x, it, rel
        z = inv_diag * r
        rz_next = r @ z
        p = z + (rz_next / rz) * p
        rz = rz_next
    raise SolverError(f"PCG did not converge in {maxiter} iterations (relative residual {rel:.3e})")


def solve_colorization(depth_m: np.ndarray, known: np.ndarray, gray: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Float solution in the units of ``depth_m``; known pixels are returned unchanged."""
    depth_m = np.asarray(depth_m, dtype=np.float64)
    known = np.asarray(known, dtype=bool)
    if depth_m.shape != gray.shape or known.shape != depth_m.shape:
        raise ValueError(f"shape mismatch: depth {depth_m.shape}, mask {known.shape}, guide {gray.shape}")
    if not known.any():
        raise ValueError("hole filling needs at least one observed pixel")
    out = depth_m.copy()
    if known.all():
        return out
    A, b, holes = build_system(depth_m, known, gray)
    x0 = np.full(holes.size, depth_m[known].mean())
    x, _, _ = pcg(A, b, x0=x0, tol=tol)
    out.ravel()[holes] = x
    return out


def fill_holes_colorization(depth: np.ndarray, rgb: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Fill zero pixels of a uint16 mm depth map guided by an aligned uint8 RGB image."""
    depth = np.asarray(depth)
    if rgb.shape[:2] != depth.shape:
        raise ValueError(f"rgb {rgb.shape[:2]} and depth {depth.shape} are not aligned")
    known = depth > 0
    if known.all():
        return depth.copy()
    filled = solve_colorization(depth.astype(np.float64) / 1000.0, known, gray_from_rgb(rgb), tol=tol)
    out = np.clip(np.rint(filled * 1000.0), 1, 65535).astype(np.uint16)
    out[known] = depth[known]
    return out
