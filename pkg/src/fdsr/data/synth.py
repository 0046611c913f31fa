"""Synthetic RGB-D-D triples for desk-scale experiments.

A scene is a sloped background plane with overlapping rectangles and
ellipses in front of it. Each shape carries its own tilted depth plane and a
flat colour whose gray level differs from everything it covers by at least
``MIN_GRAY_CONTRAST``, so every depth discontinuity is also an intensity edge.
Depths are calibrated to a room-scale setting: the background sits at
``BACKGROUND_M`` and each shape lies ``OBJECT_JUMP_M`` in front of the surface
it covers, so discontinuities are tens of centimetres rather than metres.
The simulated sensor map is a box-downsampled copy with Gaussian noise and
holes placed along depth boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..net import GRAY_COEFFS
from .resample import box_downsample, to_mm

DEPTH_RANGE_M = (0.5, 9.0)
MIN_GRAY_CONTRAST = 0.12
TEXTURE_AMPLITUDE = 4  # uint8 levels, uniform in [-a, a]
EDGE_JUMP_M = 0.1
BACKGROUND_M = (2.5, 5.0)
OBJECT_JUMP_M = (0.2, 1.2)


@dataclass(frozen=True)
class NoiseModel:
    sigma_m: float = 0.01
    hole_rate: float = 0.05


@dataclass
class SampleTriple:
    id: str
    rgb: np.ndarray  # (H, W, 3) uint8
    hr_depth: np.ndarray  # (H, W) uint16 mm
    lr_depth: Optional[np.ndarray] = None  # (H/s, W/s) uint16 mm, sensor capture
    scene_tag: str = "synthetic"


def _gray(rgb01: np.ndarray) -> np.ndarray:
    r, g, b = GRAY_COEFFS
    return r * rgb01[..., 0] + g * rgb01[..., 1] + b * rgb01[..., 2]


def _shape_mask(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray, H: int, W: int) -> np.ndarray:
    cy, cx = rng.uniform(0.1, 0.9) * H, rng.uniform(0.1, 0.9) * W
    hy, hx = rng.uniform(0.08, 0.25) * H, rng.uniform(0.08, 0.25) * W
    if rng.random() < 0.5:
        return (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
    return ((yy - cy) / hy) ** 2 + ((xx - cx) / hx) ** 2 <= 1.0


def _pick_colour(rng: np.random.Generator, under_gray: np.ndarray) -> np.ndarray:
    best, best_gap = None, -1.0
    for _ in range(64):
        g = rng.uniform(0.12, 0.88)
        rgb = np.clip(g + rng.uniform(-0.08, 0.08, size=3), 0.05, 0.95)
        gap = float(np.min(np.abs(_gray(rgb) - under_gray))) if under_gray.size else 1.0
        if gap >= MIN_GRAY_CONTRAST:
            return rgb
        if gap > best_gap:
            best, best_gap = rgb, gap
    return best


def synth_scene(
    seed: int,
    hr_size: Tuple[int, int] = (128, 128),
    s: int = 4,
    noise: NoiseModel = NoiseModel(),
    r: int = 2,
    num_shapes: Optional[int] = None,
) -> SampleTriple:
    H, W = hr_size
    if H % s or W % s or H % r or W % r:
        raise ValueError(f"HR size {H}x{W} must be divisible by scale {s} and block factor {r}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)

    base = rng.uniform(*BACKGROUND_M)
    gy, gx = rng.uniform(-0.5, 0.5, size=2)
    depth = base + gy * (yy / H - 0.5) + gx * (xx / W - 0.5)

    bg_col = rng.uniform(0.3, 0.7, size=3)
    bg_grad = rng.uniform(-0.08, 0.08, size=(2, 3))
    colour = bg_col + (yy / H - 0.5)[..., None] * bg_grad[0] + (xx / W - 0.5)[..., None] * bg_grad[1]
    region_gray = _gray(colour)

    n = int(rng.integers(3, 7)) if num_shapes is None else num_shapes
    for _ in range(n):
        m = _shape_mask(rng, yy, xx, H, W)
        if not m.any():
            continue
        under = depth[m]
        near = max(DEPTH_RANGE_M[0] + 0.1, float(under.min()) - rng.uniform(*OBJECT_JUMP_M))
        ty, tx = rng.uniform(-0.2, 0.2, size=2)
        plane = near + ty * (yy / H - 0.5) + tx * (xx / W - 0.5)
        depth[m] = plane[m]
        rgb = _pick_colour(rng, region_gray[m])
        colour[m] = rgb
        region_gray[m] = _gray(rgb)

    depth = np.clip(depth, *DEPTH_RANGE_M)
    texture = rng.integers(-TEXTURE_AMPLITUDE, TEXTURE_AMPLITUDE + 1, size=(H, W, 1))
    rgb8 = np.clip(np.rint(colour * 255.0) + texture, 0, 255).astype(np.uint8)
    hr = to_mm(depth)

    lr = box_downsample(hr, s)
    if noise.sigma_m > 0:
        lr = lr + rng.normal(0.0, noise.sigma_m * 1000.0, size=lr.shape)
    lr = np.clip(np.rint(lr), 1, 65535).astype(np.uint16)
    if noise.hole_rate > 0:
        lr = _punch_boundary_holes(lr, noise.hole_rate, rng)
    return SampleTriple(id=f"synth_{seed:06d}", rgb=rgb8, hr_depth=hr, lr_depth=lr)


def depth_discontinuities(depth_m: np.ndarray, jump: float = EDGE_JUMP_M) -> np.ndarray:
    """Pixels with a 4-neighbour depth jump above ``jump`` (both sides marked)."""
    e = np.zeros(depth_m.shape, dtype=bool)
    dy = np.abs(np.diff(depth_m, axis=0)) > jump
    dx = np.abs(np.diff(depth_m, axis=1)) > jump
    e[:-1] |= dy
    e[1:] |= dy
    e[:, :-1] |= dx
    e[:, 1:] |= dx
    return e


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:] |= mask[:-1]
    out[:-1] |= mask[1:]
    out[:, 1:] |= out[:, :-1].copy()
    out[:, :-1] |= out[:, 1:].copy()
    return out


def _punch_boundary_holes(lr: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    target = int(round(rate * lr.size))
    band = depth_discontinuities(lr.astype(np.float64) / 1000.0)
    for _ in range(3):
        if band.sum() >= target:
            break
        band = _dilate(band)
    cand = np.flatnonzero(band)
    if cand.size < target:
        extra = rng.choice(np.flatnonzero(~band), size=target - cand.size, replace=False)
        cand = np.concatenate([cand, extra])
    chosen = rng.choice(cand, size=target, replace=False) if target else np.array([], dtype=np.int64)
    out = lr.copy()
    out.ravel()[chosen] = 0
    return out
