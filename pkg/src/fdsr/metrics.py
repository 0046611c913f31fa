"""Evaluation metrics: RMSE, value/edge error rates, return density, timing.

Metric functions take float depth arrays in metres plus an optional boolean
validity mask (default: ``gt > 0``). RMSE is reported in centimetres, rates in
percent.
"""

from __future__ import annotations

import dataclasses
import json
import statistics
import time
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import ndimage

EPS_M = 1e-3


class EmptyEdgeMaskWarning(UserWarning):
    pass


@dataclass
class MetricConfig:
    value_threshold: float = 0.10
    edge_threshold: float = 0.012
    range_cap_m: float = 10.0
    sobel_threshold_m: float = 0.05
    edge_dilation: int = 1


def _mask(gt: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    m = gt > 0 if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != gt.shape:
        raise ValueError(f"mask shape {m.shape} does not match {gt.shape}")
    return m


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} and gt {gt.shape} differ in shape")
    return pred, gt


def rmse(pred: np.ndarray, gt: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """Root-mean-square error over valid pixels, in centimetres."""
    pred, gt = _pair(pred, gt)
    m = _mask(gt, mask)
    if not m.any():
        raise ValueError("rmse: no valid pixels")
    d = gt[m] - pred[m]
    return float(np.sqrt(np.mean(d * d)) * 100.0)


def _relative_error(pred, gt):
    return np.abs(pred - gt) / np.maximum(gt, EPS_M)


def value_error_rate(
    pred: np.ndarray,
    gt: np.ndarray,
    mask: Optional[np.ndarray] = None,
    rel_threshold: float = 0.10,
    range_cap_m: float = 10.0,
) -> float:
    """Percent of valid pixels (``0 < gt <= range_cap_m``) whose relative error exceeds the threshold."""
    if rel_threshold <= 0:
        raise ValueError("rel_threshold must be positive")
    pred, gt = _pair(pred, gt)
    m = _mask(gt, mask) & (gt > 0) & (gt <= range_cap_m)
    if not m.any():
        raise ValueError("value_error_rate: no valid pixels")
    return float(100.0 * np.count_nonzero(_relative_error(pred[m], gt[m]) > rel_threshold) / np.count_nonzero(m))


def edge_mask(gt: np.ndarray, sobel_threshold: float = 0.05, dilation_radius: int = 1) -> np.ndarray:
    """Pixels whose Sobel gradient magnitude (metres per pixel) exceeds the threshold, dilated.

    The Sobel responses are divided by 8 so a unit ramp has magnitude one;
    borders replicate the nearest pixel.
    """
    gt = np.asarray(gt, dtype=np.float64)
    gy = ndimage.sobel(gt, axis=0, mode="nearest") / 8.0
    gx = ndimage.sobel(gt, axis=1, mode="nearest") / 8.0
    edges = np.hypot(gx, gy) > sobel_threshold
    if dilation_radius > 0 and edges.any():
        k = 2 * dilation_radius + 1
        edges = ndimage.binary_dilation(edges, structure=np.ones((k, k), dtype=bool))
    return edges


def edge_error_rate(
    pred: np.ndarray,
    gt: np.ndarray,
    mask: Optional[np.ndarray] = None,
    rel_threshold: float = 0.012,
    sobel_threshold: float = 0.05,
    dilation_radius: int = 1,
    edges: Optional[np.ndarray] = None,
) -> float:
    """Percent of edge-area pixels whose relative error exceeds the threshold.

    An empty edge area yields 0.0 and an :class:`EmptyEdgeMaskWarning`.
    """
    pred, gt = _pair(pred, gt)
    if edges is None:
        edges = edge_mask(gt, sobel_threshold, dilation_radius)
    m = edges & _mask(gt, mask) & (gt > 0)
    n = np.count_nonzero(m)
    if n == 0:
        warnings.warn("edge mask is empty; edge error rate reported as 0", EmptyEdgeMaskWarning, stacklevel=2)
        return 0.0
    return float(100.0 * np.count_nonzero(_relative_error(pred[m], gt[m]) > rel_threshold) / n)


def return_density(raw: np.ndarray) -> float:
    raw = np.asarray(raw)
    return float(np.count_nonzero(raw) / raw.size)


# --------------------------------------------------------------------------
# reports


@dataclass
class SampleMetrics:
    id: str
    rmse_cm: float
    value_error_pct: float
    edge_error_pct: float
    return_density: float
    edge_mask_empty: bool = False


@dataclass
class MetricsReport:
    method: str
    config: MetricConfig
    samples: List[SampleMetrics] = field(default_factory=list)
    forward_ms: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    def aggregate(self) -> dict:
        keys = ("rmse_cm", "value_error_pct", "edge_error_pct", "return_density")
        if not self.samples:
            return {k: None for k in keys}
        return {k: float(np.mean([getattr(s, k) for s in self.samples])) for k in keys}

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "method": self.method,
            "metric_config": dataclasses.asdict(self.config),
            "aggregate": self.aggregate(),
            "samples": [dataclasses.asdict(s) for s in self.samples],
            "forward_ms": self.forward_ms,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def fill_nearest(gt: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace invalid pixels by their nearest valid neighbour (Euclidean)."""
    if valid.all() or not valid.any():
        return gt.copy()
    idx = ndimage.distance_transform_edt(~valid, return_distances=False, return_indices=True)
    return gt[tuple(idx)]


def evaluate_sample(
    sample_id: str,
    pred_m: np.ndarray,
    gt_m: np.ndarray,
    raw: Optional[np.ndarray] = None,
    config: MetricConfig = MetricConfig(),
) -> SampleMetrics:
    valid = gt_m > 0
    # holes would otherwise register as depth edges
    edges = edge_mask(fill_nearest(np.asarray(gt_m, dtype=np.float64), valid), config.sobel_threshold_m, config.edge_dilation)
    empty = not (edges & valid).any()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyEdgeMaskWarning)
        eer = edge_error_rate(pred_m, gt_m, valid, config.edge_threshold, edges=edges)
    return SampleMetrics(
        id=sample_id,
        rmse_cm=rmse(pred_m, gt_m, valid),
        value_error_pct=value_error_rate(pred_m, gt_m, valid, config.value_threshold, config.range_cap_m),
        edge_error_pct=eer,
        return_density=return_density(raw if raw is not None else gt_m),
        edge_mask_empty=empty,
    )


def format_table(reports: List[MetricsReport]) -> str:
    """Aligned text table, one row per method."""
    head = f"{'Method':<16}{'RMSE (cm)':>12}{'Value Err %':>14}{'Edge Err %':>13}{'Return dens':>13}{'ms':>10}"
    lines = [head, "-" * len(head)]
    for r in reports:
        a = r.aggregate()

        def fmt(v, spec):
            return format(v, spec) if v is not None else format("-", ">" + spec.split(".")[0])

        lines.append(
            f"{r.method:<16}{fmt(a['rmse_cm'], '12.3f')}{fmt(a['value_error_pct'], '14.3f')}"
            f"{fmt(a['edge_error_pct'], '13.3f')}{fmt(a['return_density'], '13.3f')}{fmt(r.forward_ms, '10.1f')}"
        )
    return "\n".join(lines)


# --------------------------------------------------------------------------
# timing


@dataclass
class BenchResult:
    reps: int
    times_ms: List[float]
    median_ms: float
    min_ms: float
    hr_size: tuple
    params: int
    macs: int
    device: str = "cpu (wall clock)"


def bench_forward(weights, config, hr_size=(480, 640), reps: int = 3, seed: int = 0) -> BenchResult:
    """Wall-clock forward time: one warm-up run, then ``reps`` timed runs."""
    from .net import count_params_and_macs, fdsr_forward
    from .tensor import Tensor, no_grad

    if reps < 3:
        raise ValueError("bench_forward needs at least 3 repetitions")
    H, W = hr_size
    s = config.scale
    rng = np.random.default_rng(seed)
    rgb = Tensor(rng.random((1, 3, H, W), dtype=np.float32))
    lr = Tensor(rng.random((1, 1, H // s, W // s), dtype=np.float32))
    frozen = {k: Tensor(v.data) for k, v in weights.items()}
    times = []
    with no_grad():
        fdsr_forward(rgb, lr, frozen, config)
        for _ in range(reps):
            t0 = time.perf_counter()
            fdsr_forward(rgb, lr, frozen, config)
            times.append((time.perf_counter() - t0) * 1000.0)
    cost = count_params_and_macs(config, H, W)
    return BenchResult(
        reps=reps,
        times_ms=times,
        median_ms=statistics.median(times),
        min_ms=min(times),
        hr_size=(H, W),
        params=cost.params,
        macs=cost.macs,
    )
