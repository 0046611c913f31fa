"""FDSR network: high-frequency guidance branch + multi-scale reconstruction branch.

Weights are a flat ``dict`` from dotted parameter path to :class:`Tensor`
(``FdsrWeights``).  The forward functions are pure: they read weights and
inputs and record onto the tape when any of them requires grad.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import ops
from .tensor import Tensor

FdsrWeights = Dict[str, Tensor]

ABLATIONS = ("full", "no_hfgb", "no_hfl")
GRAY_COEFFS = (0.299, 0.587, 0.114)
# residual head starts near zero so the output begins close to bicubic
OUT_GAIN = 0.01


@dataclass
class FdsrConfig:
    base_channels: int = 32
    guide_channels: int = 32
    alpha: float = 0.5
    num_msdb: int = 4
    num_hfl: int = 3
    dilations: Tuple[int, int] = (1, 2)
    block_factor: int = 2
    scale: int = 4
    ablation: str = "full"
    slope: float = 0.2
    guide_input: str = "gray"  # "gray" or "rgb"

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        self.validate()

    def validate(self) -> None:
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.guide_input not in ("gray", "rgb"):
            raise ValueError(f"guide_input must be 'gray' or 'rgb', got {self.guide_input!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        low = self.guide_channels * self.alpha
        if abs(low - round(low)) > 1e-9 or round(low) in (0, self.guide_channels):
            raise ValueError(
                f"guide_channels*alpha = {low} must be an integer strictly between 0 and {self.guide_channels}"
            )
        if self.num_hfl != self.num_msdb - 1:
            raise ValueError(f"num_hfl ({self.num_hfl}) must equal num_msdb - 1 ({self.num_msdb - 1})")
        if len(self.dilations) != 2 or min(self.dilations) < 1:
            raise ValueError(f"dilations must be two positive ints, got {self.dilations}")
        for name in ("base_channels", "guide_channels", "num_msdb", "block_factor", "scale"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def low_channels(self) -> int:
        return int(round(self.guide_channels * self.alpha))

    @property
    def high_channels(self) -> int:
        return self.guide_channels - self.low_channels

    @property
    def packed_channels(self) -> int:
        return self.block_factor ** 2

    @property
    def guide_in_channels(self) -> int:
        return self.packed_channels * (1 if self.guide_input == "gray" else 3)

    @property
    def guidance_channels(self) -> int:
        """Width of each guidance tensor fed to a fusion site (0 without HFGB)."""
        if self.ablation == "no_hfgb":
            return 0
        if self.ablation == "no_hfl":
            return self.guide_channels
        return self.high_channels

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FdsrConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown FdsrConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def tiny(cls, **overrides) -> "FdsrConfig":
        kw = dict(base_channels=8, guide_channels=8, num_msdb=4, num_hfl=3, block_factor=2)
        kw.update(overrides)
        return cls(**kw)


# --------------------------------------------------------------------------
# parameter layout


def param_shapes(config: FdsrConfig) -> Dict[str, Tuple[int, ...]]:
    """Every parameter path with its shape, in canonical order."""
    C = config.base_channels
    G = config.guide_channels
    ch, cl = config.high_channels, config.low_channels
    r2 = config.packed_channels
    shapes: Dict[str, Tuple[int, ...]] = {}

    def conv(prefix: str, cin: int, cout: int, k: int, bias: bool = True) -> None:
        shapes[f"{prefix}.w"] = (cout, cin, k, k)
        if bias:
            shapes[f"{prefix}.b"] = (cout,)

    if config.ablation == "full":
        conv("hfgb.entry", config.guide_in_channels, G, 3)
        for i in range(1, config.num_hfl + 1):
            p = f"hfgb.hfl{i}"
            last = i == config.num_hfl
            shapes[f"{p}.w_h2h"] = (ch, ch, 3, 3)
            shapes[f"{p}.w_l2h"] = (ch, cl, 3, 3)
            shapes[f"{p}.b_h"] = (ch,)
            if not last:
                # the final low-frequency output is never consumed
                shapes[f"{p}.w_l2l"] = (cl, cl, 3, 3)
                shapes[f"{p}.w_h2l"] = (cl, ch, 3, 3)
                shapes[f"{p}.b_l"] = (cl,)
    elif config.ablation == "no_hfl":
        conv("hfgb.entry", config.guide_in_channels, G, 3)
        for i in range(1, config.num_hfl + 1):
            conv(f"hfgb.conv{i}", G, G, 3)

    conv("msrb.entry", r2, C, 3)
    gc = config.guidance_channels
    for i in range(1, config.num_msdb + 1):
        p = f"msrb.msdb{i}"
        for j, _ in enumerate(config.dilations, start=1):
            conv(f"{p}.branch{j}", C, C, 3)
        conv(f"{p}.integrate", C, C, 1)
        if i <= config.num_hfl and gc:
            conv(f"msrb.fuse{i}", gc + C, C, 1)
    conv("msrb.out", C, r2, 3)
    return shapes


def init_weights(config: FdsrConfig, seed: int = 0) -> FdsrWeights:
    """Fan-in scaled normal init, gain sqrt(2 / (1 + slope^2)); biases zero.

    The output convolution carries no activation and uses unit gain.
    """
    rng = np.random.default_rng(seed)
    gain_act = np.sqrt(2.0 / (1.0 + config.slope ** 2))
    weights: FdsrWeights = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            data = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            gain = OUT_GAIN if name.startswith("msrb.out") else gain_act
            data = (rng.standard_normal(shape) * (gain / np.sqrt(fan_in))).astype(np.float32)
        weights[name] = Tensor(data, requires_grad=True, name=name)
    return weights


def init_std(config: FdsrConfig, name: str, shape: Tuple[int, ...]) -> float:
    """Target standard deviation used by :func:`init_weights` for a kernel."""
    fan_in = shape[1] * shape[2] * shape[3]
    gain = OUT_GAIN if name.startswith("msrb.out") else np.sqrt(2.0 / (1.0 + config.slope ** 2))
    return float(gain / np.sqrt(fan_in))


def check_weights(weights: FdsrWeights, config: FdsrConfig) -> None:
    expected = param_shapes(config)
    missing = set(expected) - set(weights)
    extra = set(weights) - set(expected)
    if missing or extra:
        raise ValueError(f"weights do not match config: missing={sorted(missing)} extra={sorted(extra)}")
    for k, shape in expected.items():
        if weights[k].shape != shape:
            raise ValueError(f"{k}: expected shape {shape}, got {weights[k].shape}")


# --------------------------------------------------------------------------
# forward pieces


def _same_pad(k: int, dilation: int) -> int:
    return dilation * (k - 1) // 2


def _conv(x: Tensor, weights: FdsrWeights, prefix: str, dilation: int = 1) -> Tensor:
    w = weights[f"{prefix}.w"]
    return ops.conv2d(x, w, weights.get(f"{prefix}.b"), padding=_same_pad(w.shape[2], dilation), dilation=dilation)


def to_gray(rgb: np.ndarray) -> np.ndarray:
    r, g, b = GRAY_COEFFS
    return (r * rgb[:, 0:1] + g * rgb[:, 1:2] + b * rgb[:, 2:3]).astype(rgb.dtype)


def preprocess_inputs(rgb: Tensor, depth_lr: Tensor, config: FdsrConfig) -> Tuple[Tensor, Tensor, Tensor]:
    """Bicubic-upsample the LR depth, convert the guide, and pack both by the block factor.

    Returns ``(depth_up_packed, guide_packed, depth_up)``.
    """
    if rgb.data.ndim != 4 or rgb.shape[1] != 3:
        raise ValueError(f"rgb must be (B, 3, H, W), got {rgb.shape}")
    if depth_lr.data.ndim != 4 or depth_lr.shape[1] != 1:
        raise ValueError(f"depth_lr must be (B, 1, M, N), got {depth_lr.shape}")
    B, _, M, N = depth_lr.shape
    s, r = config.scale, config.block_factor
    if rgb.shape[0] != B or rgb.shape[2:] != (s * M, s * N):
        raise ValueError(f"rgb shape {rgb.shape} does not match scale {s} x depth {depth_lr.shape}")
    H, W = s * M, s * N
    if H % r or W % r:
        raise ValueError(f"block factor {r} does not divide HR size {H}x{W}")
    depth_up = ops.bicubic_resize(depth_lr, H, W) if s != 1 else Tensor(depth_lr.data.copy())
    guide = Tensor(to_gray(rgb.data)) if config.guide_input == "gray" else Tensor(rgb.data)
    return ops.pixel_unshuffle(depth_up, r), ops.pixel_unshuffle(guide, r), depth_up


def hfl_forward(
    y_h: Tensor, y_l: Tensor, weights: FdsrWeights, prefix: str, slope: float
) -> Tuple[Tensor, Optional[Tensor]]:
    """One high-frequency layer (octave exchange between the two streams).

    When the layer has no low-frequency parameters, the low output is ``None``.
    """
    if y_h.shape[2] != 2 * y_l.shape[2] or y_h.shape[3] != 2 * y_l.shape[3]:
        raise ValueError(f"high stream {y_h.shape} must be exactly twice the low stream {y_l.shape}")
    h = ops.add(
        ops.conv2d(y_h, weights[f"{prefix}.w_h2h"], weights[f"{prefix}.b_h"], padding=1),
        ops.nearest_upsample2(ops.conv2d(y_l, weights[f"{prefix}.w_l2h"], padding=1)),
    )
    h = ops.leaky_relu(h, slope)
    if f"{prefix}.w_l2l" not in weights:
        return h, None
    low = ops.add(
        ops.conv2d(y_l, weights[f"{prefix}.w_l2l"], weights[f"{prefix}.b_l"], padding=1),
        ops.conv2d(ops.avg_pool2(y_h), weights[f"{prefix}.w_h2l"], padding=1),
    )
    return h, ops.leaky_relu(low, slope)


def hfgb_forward(guide_packed: Tensor, weights: FdsrWeights, config: FdsrConfig) -> List[Tensor]:
    """Guidance tensors Y^H_1..Y^H_n at packed resolution (empty without HFGB)."""
    if config.ablation == "no_hfgb":
        return []
    feat = ops.leaky_relu(_conv(guide_packed, weights, "hfgb.entry"), config.slope)
    if config.ablation == "no_hfl":
        out = []
        for i in range(1, config.num_hfl + 1):
            feat = ops.leaky_relu(_conv(feat, weights, f"hfgb.conv{i}"), config.slope)
            out.append(feat)
        return out
    H, W = feat.shape[2:]
    if H % 2 or W % 2:
        raise ValueError(f"packed guide size {H}x{W} must be even for the octave split")
    ch = config.high_channels
    y_h = ops.slice_channels(feat, 0, ch)
    y_l = ops.avg_pool2(ops.slice_channels(feat, ch, config.guide_channels))
    guidance = []
    for i in range(1, config.num_hfl + 1):
        y_h, y_l = hfl_forward(y_h, y_l, weights, f"hfgb.hfl{i}", config.slope)
        guidance.append(y_h)
    return guidance


def msdb_forward(f: Tensor, weights: FdsrWeights, prefix: str, dilations, slope: float) -> Tensor:
    """Parallel dilated 3x3 branches, summed, then a 1x1 integration conv and activation."""
    acc = None
    for j, d in enumerate(dilations, start=1):
        y = _conv(f, weights, f"{prefix}.branch{j}", dilation=d)
        acc = y if acc is None else ops.add(acc, y)
    return ops.leaky_relu(_conv(acc, weights, f"{prefix}.integrate"), slope)


def fdsr_forward(rgb: Tensor, depth_lr: Tensor, weights: FdsrWeights, config: FdsrConfig) -> Tensor:
    """HR depth = bicubic(depth_lr) + learned residual guided by ``rgb``.

    Both branch inputs are shifted to zero mean per sample before the first
    convolution, so the residual depends on relative depth and intensity only;
    the bicubic term keeps the absolute level. The shift is a constant (no
    gradient flows through the means, which are data, not parameters).
    """
    depth_packed, guide_packed, depth_up = preprocess_inputs(rgb, depth_lr, config)
    guide_packed = Tensor(guide_packed.data - guide_packed.data.mean(axis=(1, 2, 3), keepdims=True))
    guidance = hfgb_forward(guide_packed, weights, config)
    centred = Tensor(depth_packed.data - depth_packed.data.mean(axis=(1, 2, 3), keepdims=True))
    f = ops.leaky_relu(_conv(centred, weights, "msrb.entry"), config.slope)
    for i in range(1, config.num_msdb + 1):
        f = msdb_forward(f, weights, f"msrb.msdb{i}", config.dilations, config.slope)
        if i <= len(guidance):
            fused = ops.concat_channels(guidance[i - 1], f)
            f = ops.leaky_relu(_conv(fused, weights, f"msrb.fuse{i}"), config.slope)
    residual = ops.pixel_shuffle(_conv(f, weights, "msrb.out"), config.block_factor)
    return ops.add(depth_up, residual)


# --------------------------------------------------------------------------
# analytic cost


@dataclass
class CostReport:
    params: int
    macs: int
    by_group: Dict[str, Tuple[int, int]] = field(default_factory=dict)


def count_params_and_macs(config: FdsrConfig, hr_h: int = 480, hr_w: int = 640) -> CostReport:
    """Exact parameter count and convolution multiply-accumulates for one HR frame.

    MACs cover convolutions only (resampling, activations and additions are
    excluded). Groups are the first path component: ``hfgb`` and ``msrb``.
    """
    r = config.block_factor
    if hr_h % (2 * r) or hr_w % (2 * r):
        raise ValueError(f"HR size {hr_h}x{hr_w} must be divisible by 2*block_factor")
    full_px = (hr_h // r) * (hr_w // r)
    half_px = full_px // 4
    shapes = param_shapes(config)
    groups: Dict[str, List[int]] = {}
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        macs = 0
        if len(shape) == 4:
            px = half_px if (name.endswith("w_l2l") or name.endswith("w_l2h")) else full_px
            if name.endswith("w_h2l"):
                px = half_px
            macs = px * n
        g = groups.setdefault(name.split(".")[0], [0, 0])
        g[0] += n
        g[1] += macs
    return CostReport(
        params=sum(g[0] for g in groups.values()),
        macs=sum(g[1] for g in groups.values()),
        by_group={k: (v[0], v[1]) for k, v in groups.items()},
    )
