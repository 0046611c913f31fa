"""Masked-L1 training with a step-halving learning-rate schedule.

Depth enters the network in normalised units (metres / ``depth_scale_m``).
One iteration is one optimizer step. Every step draws its mini-batch from the
state's own RNG, so a run is fully determined by (config, seed, data) and a
checkpoint taken at a validation point resumes bit-identically.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import ops
from .data.holes import fill_holes_colorization
from .data.resample import bicubic_downsample_depth, box_downsample_rgb
from .data.synth import SampleTriple
from .net import FdsrConfig, FdsrWeights, fdsr_forward, init_weights
from .tensor import Tensor, no_grad
from .weights_io import load_weights, read_arrays, save_weights, write_arrays

log = logging.getLogger(__name__)

REGIMES = ("downsampling", "real_world")
OPTIMIZERS = ("adam", "sgd_momentum")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    initial_lr: float = 5e-4
    halve_every: int = 80_000
    max_epochs: int = 100
    max_steps: Optional[int] = None
    batch: int = 8
    patch: int = 256  # HR patch edge; 0 means full frame
    seed: int = 0
    regime: str = "downsampling"
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    depth_scale_m: float = 10.0
    val_every: int = 0  # 0 means once per epoch
    flip: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.initial_lr < 0:
            raise ValueError("initial_lr must be non-negative")
        if self.halve_every <= 0:
            raise ValueError("halve_every must be positive")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.batch < 1 or self.patch < 0 or self.max_epochs < 0:
            raise ValueError("batch must be >= 1, patch and max_epochs >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


def lr_at(iteration: int, config: TrainConfig) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return config.initial_lr * 0.5 ** (iteration // config.halve_every)


def l1_loss(pred: Tensor, gt: Tensor, mask: Tensor) -> Tensor:
    """Mean absolute error over pixels where ``mask`` is 1."""
    if pred.shape != gt.shape or mask.shape != pred.shape:
        raise ValueError(f"l1_loss: shapes differ {pred.shape}, {gt.shape}, {mask.shape}")
    count = int(np.count_nonzero(mask.data))
    if count == 0:
        raise ValueError("l1_loss: mask has no valid pixels")
    err = ops.abs(ops.sub(gt, pred))
    return ops.scalar_mul(ops.sum(ops.mul(err, mask)), 1.0 / count)


# --------------------------------------------------------------------------
# optimizers


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, Tensor], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in params.items():
            if p.grad is None:
                continue
            g = p.grad
            if k not in self.m:
                self.m[k] = np.zeros_like(p.data)
                self.v[k] = np.zeros_like(p.data)
            m, v = self.m[k], self.v[k]
            m *= p.data.dtype.type(b1)
            m += p.data.dtype.type(1 - b1) * g
            v *= p.data.dtype.type(b2)
            v += p.data.dtype.type(1 - b2) * (g * g)
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (lr * upd).astype(p.data.dtype)

    def buffers(self) -> Dict[str, np.ndarray]:
        out = {f"m/{k}": a for k, a in self.m.items()}
        out.update({f"v/{k}": a for k, a in self.v.items()})
        return out

    def load_buffers(self, arrays: Dict[str, np.ndarray], t: int) -> None:
        self.t = t
        self.m = {k[2:]: a.copy() for k, a in arrays.items() if k.startswith("m/")}
        self.v = {k[2:]: a.copy() for k, a in arrays.items() if k.startswith("v/")}


class SGDMomentum:
    def __init__(self, momentum=0.9):
        self.momentum = momentum
        self.t = 0
        self.vel: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, Tensor], lr: float) -> None:
        self.t += 1
        for k, p in params.items():
            if p.grad is None:
                continue
            v = self.vel.setdefault(k, np.zeros_like(p.data))
            v *= p.data.dtype.type(self.momentum)
            v += p.grad
            p.data -= (lr * v).astype(p.data.dtype)

    def buffers(self) -> Dict[str, np.ndarray]:
        return {f"vel/{k}": a for k, a in self.vel.items()}

    def load_buffers(self, arrays: Dict[str, np.ndarray], t: int) -> None:
        self.t = t
        self.vel = {k[4:]: a.copy() for k, a in arrays.items() if k.startswith("vel/")}


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.beta1, config.beta2, config.eps)
    return SGDMomentum(config.momentum)


@dataclass
class TrainState:
    iteration: int = 0
    lr: float = 0.0
    optimizer: object = None
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    best_val_rmse: float = math.inf

    @classmethod
    def fresh(cls, config: TrainConfig) -> "TrainState":
        return cls(
            iteration=0,
            lr=lr_at(0, config),
            optimizer=make_optimizer(config),
            rng=np.random.default_rng(config.seed),
        )


def optimize_step(
    state: TrainState,
    params: Dict[str, Tensor],
    loss_fn: Callable[[], Tensor],
    config: TrainConfig,
) -> float:
    """Forward, backward, update at the scheduled rate, zero grads, advance the counter."""
    state.lr = lr_at(state.iteration, config)
    loss = loss_fn()
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value} at iteration {state.iteration} (lr {state.lr:g})")
    loss.backward()
    state.optimizer.step(params, state.lr)
    for p in params.values():
        p.zero_grad()
    state.iteration += 1
    return value


# --------------------------------------------------------------------------
# data preparation


def make_pairs(sample: SampleTriple, regime: str, s: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(input LR depth, HR rgb guide, HR target depth)`` for one training regime (uint arrays)."""
    hr = sample.hr_depth
    if regime == "downsampling":
        return bicubic_downsample_depth(hr, s), sample.rgb, hr
    if regime != "real_world":
        raise ValueError(f"unknown regime {regime!r}")
    if sample.lr_depth is None:
        raise ValueError(f"{sample.id}: real_world regime needs a sensor LR depth map")
    lr = sample.lr_depth
    if (lr.shape[0] * s, lr.shape[1] * s) != hr.shape:
        raise ValueError(f"{sample.id}: LR {lr.shape} x {s} does not match HR {hr.shape}")
    rgb_lr = box_downsample_rgb(sample.rgb, s)
    return fill_holes_colorization(lr, rgb_lr), sample.rgb, hr


@dataclass
class PreparedPair:
    id: str
    lr: np.ndarray  # (1, h, w) float32 normalised
    rgb: np.ndarray  # (3, H, W) float32 in [0, 1]
    hr: np.ndarray  # (1, H, W) float32 normalised
    mask: np.ndarray  # (1, H, W) float32 {0, 1}


def prepare(sample: SampleTriple, regime: str, s: int, depth_scale_m: float) -> PreparedPair:
    lr, rgb, hr = make_pairs(sample, regime, s)
    k = np.float32(1.0 / (1000.0 * depth_scale_m))
    return PreparedPair(
        id=sample.id,
        lr=(lr.astype(np.float32) * k)[None],
        rgb=(rgb.astype(np.float32) / np.float32(255.0)).transpose(2, 0, 1).copy(),
        hr=(hr.astype(np.float32) * k)[None],
        mask=(hr > 0).astype(np.float32)[None],
    )


def sample_batch(pairs: Sequence[PreparedPair], rng: np.random.Generator, config: TrainConfig, s: int):
    """Random HR-aligned crops with optional horizontal flips, stacked into a batch."""
    idx = rng.integers(0, len(pairs), size=config.batch)
    rgbs, lrs, hrs, masks = [], [], [], []
    for i in idx:
        p = pairs[int(i)]
        H, W = p.hr.shape[1:]
        P = config.patch
        if P and (P > H or P > W):
            raise ValueError(f"patch {P} larger than sample {p.id} ({H}x{W})")
        if P and P < H or P and P < W:
            lp = P // s
            y = int(rng.integers(0, H // s - lp + 1))
            x = int(rng.integers(0, W // s - lp + 1))
            lr = p.lr[:, y:y + lp, x:x + lp]
            sl = (slice(None), slice(s * y, s * y + P), slice(s * x, s * x + P))
            rgb, hr, mask = p.rgb[sl], p.hr[sl], p.mask[sl]
        else:
            lr, rgb, hr, mask = p.lr, p.rgb, p.hr, p.mask
        if config.flip and rng.random() < 0.5:
            lr, rgb, hr, mask = (a[:, :, ::-1] for a in (lr, rgb, hr, mask))
        rgbs.append(rgb)
        lrs.append(lr)
        hrs.append(hr)
        masks.append(mask)
    stack = lambda xs: np.ascontiguousarray(np.stack(xs), dtype=np.float32)  # noqa: E731
    return stack(rgbs), stack(lrs), stack(hrs), stack(masks)


def train_step(
    state: TrainState,
    weights: FdsrWeights,
    batch,
    fdsr_config: FdsrConfig,
    config: TrainConfig,
) -> float:
    rgb, lr, hr, mask = (Tensor(a) for a in batch)
    return optimize_step(state, weights, lambda: l1_loss(fdsr_forward(rgb, lr, weights, fdsr_config), hr, mask), config)


def predict(pair: PreparedPair, weights: FdsrWeights, fdsr_config: FdsrConfig) -> np.ndarray:
    """Normalised HR prediction (H, W) for one prepared pair, no tape."""
    with no_grad():
        out = fdsr_forward(Tensor(pair.rgb[None]), Tensor(pair.lr[None]), weights, fdsr_config)
    return out.data[0, 0]


def validation_rmse_cm(pairs: Sequence[PreparedPair], weights, fdsr_config, depth_scale_m: float) -> float:
    from .metrics import rmse

    vals = []
    for p in pairs:
        pred = predict(p, weights, fdsr_config).astype(np.float64) * depth_scale_m
        gt = p.hr[0].astype(np.float64) * depth_scale_m
        vals.append(rmse(pred, gt, p.mask[0] > 0))
    return float(np.mean(vals))


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(prefix: Union[str, Path], state: TrainState, weights, fdsr_config, config: TrainConfig, log_records) -> None:
    prefix = Path(prefix)
    save_weights(f"{prefix}.fdsrw", weights, fdsr_config)
    with open(f"{prefix}.opt.fdsrw", "wb") as f:
        write_arrays(f, state.optimizer.buffers())
    meta = {
        "schema_version": 1,
        "iteration": state.iteration,
        "optimizer_t": state.optimizer.t,
        "best_val_rmse": state.best_val_rmse if math.isfinite(state.best_val_rmse) else None,
        "rng_state": state.rng.bit_generator.state,
        "train_config": config.to_dict(),
        "log": log_records,
    }
    Path(f"{prefix}.state.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(prefix: Union[str, Path], config: TrainConfig):
    from .weights_io import load_weights

    prefix = Path(prefix)
    weights = load_weights(f"{prefix}.fdsrw")
    meta = json.loads(Path(f"{prefix}.state.json").read_text())
    state = TrainState.fresh(config)
    state.iteration = meta["iteration"]
    state.lr = lr_at(state.iteration, config)
    best = meta["best_val_rmse"]
    state.best_val_rmse = math.inf if best is None else best
    with open(f"{prefix}.opt.fdsrw", "rb") as f:
        state.optimizer.load_buffers(read_arrays(f), meta["optimizer_t"])
    state.rng.bit_generator.state = meta["rng_state"]
    return weights, state, meta["log"]


# --------------------------------------------------------------------------


@dataclass
class FitResult:
    weights: FdsrWeights
    best_weights: FdsrWeights
    log: List[dict]
    state: TrainState


def _copy_weights(w: FdsrWeights) -> FdsrWeights:
    return {k: Tensor(t.data.copy(), requires_grad=True, name=k) for k, t in w.items()}


def fit(
    train_samples: Sequence[SampleTriple],
    fdsr_config: FdsrConfig,
    config: TrainConfig,
    val_samples: Sequence[SampleTriple] = (),
    out_dir: Optional[Union[str, Path]] = None,
    init: Optional[FdsrWeights] = None,
    resume_from: Optional[Union[str, Path]] = None,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> FitResult:
    """Train FDSR on ``train_samples``; validate, log and checkpoint at every validation point.

    Writes ``train_log.jsonl``, ``best.fdsrw`` and ``checkpoint.*`` into
    ``out_dir`` when given.
    """
    if not train_samples:
        raise ValueError("fit needs at least one training sample")
    s = fdsr_config.scale
    if config.patch and config.patch % (s * 2 * fdsr_config.block_factor):
        raise ValueError(f"patch {config.patch} must be divisible by 2 * scale * block_factor")
    pairs = [prepare(x, config.regime, s, config.depth_scale_m) for x in train_samples]
    val_pairs = [prepare(x, "downsampling" if x.lr_depth is None else config.regime, s, config.depth_scale_m) for x in val_samples]

    steps_per_epoch = max(1, math.ceil(len(pairs) / config.batch))
    total = config.max_steps if config.max_steps is not None else config.max_epochs * steps_per_epoch
    if config.max_epochs == 0 and config.max_steps is None:
        total = 0
    val_every = config.val_every or steps_per_epoch

    if resume_from is not None:
        weights, state, records = load_checkpoint(resume_from, config)
    else:
        weights = _copy_weights(init) if init is not None else init_weights(fdsr_config, config.seed)
        state = TrainState.fresh(config)
        records = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if resume_from is not None and out is not None and (out / "best.fdsrw").is_file():
        best = load_weights(out / "best.fdsrw")
    else:
        best = _copy_weights(weights)

    acc, n_acc = 0.0, 0
    while state.iteration < total:
        batch = sample_batch(pairs, state.rng, config, s)
        loss = train_step(state, weights, batch, fdsr_config, config)
        acc += loss
        n_acc += 1
        if on_step is not None:
            on_step(state.iteration, loss)
        if state.iteration % val_every == 0 or state.iteration == total:
            rec = {
                "iteration": state.iteration,
                "epoch": state.iteration / steps_per_epoch,
                "lr": state.lr,
                "train_loss": acc / n_acc,
                "val_rmse_cm": None,
            }
            if val_pairs:
                v = validation_rmse_cm(val_pairs, weights, fdsr_config, config.depth_scale_m)
                rec["val_rmse_cm"] = v
                if v < state.best_val_rmse:
                    state.best_val_rmse = v
                    best = _copy_weights(weights)
                    if out is not None:
                        save_weights(out / "best.fdsrw", best, fdsr_config)
            records.append(rec)
            acc, n_acc = 0.0, 0
            log.info("iter %d loss %.6f val %s", rec["iteration"], rec["train_loss"], rec["val_rmse_cm"])
            if out is not None:
                save_checkpoint(out / "checkpoint", state, weights, fdsr_config, config, records)
    if out is not None:
        with open(out / "train_log.jsonl", "w") as f:
            for rec in records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
        save_weights(out / "final.fdsrw", weights, fdsr_config)
    if not val_pairs:
        best = weights
    return FitResult(weights=weights, best_weights=best, log=records, state=state)
