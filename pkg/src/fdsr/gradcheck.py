"""Central finite-difference checks of tape gradients, run in float64."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, backward, no_grad

STEP = 1e-6
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    rel_error: float
    checked: int
    passed: bool
    skipped_kinks: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "rel_error": self.rel_error,
            "checked": self.checked,
            "skipped_kinks": self.skipped_kinks,
            "passed": self.passed,
        }


@contextmanager
def _trace_kinks():
    """Collect the sign patterns of every piecewise-linear op evaluated inside."""
    patterns: List[np.ndarray] = []

    def cb(op, pattern):
        patterns.append(pattern.copy())

    ops._kink_observers.append(cb)
    try:
        yield patterns
    finally:
        ops._kink_observers.remove(cb)


def _same_patterns(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(
    fn: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[Tensor],
    name: str = "",
    step: float = STEP,
    tol: float = TOLERANCE,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> CheckResult:
    """Compare tape gradients of scalar ``fn(inputs)`` with central differences.

    Only inputs with ``requires_grad`` are probed; with ``max_entries`` a random
    subset of coordinates per input is checked. The error is
    ``||analytic - numeric|| / max(||analytic||, ||numeric||)`` over all probed
    coordinates.

    A probe whose +/- step flips the sign pattern of any leaky ReLU or abs is
    not differentiable there; such coordinates are skipped and counted in
    ``skipped_kinks``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in inputs:
        t.zero_grad()
    with _trace_kinks() as base:
        root = fn(inputs)
    backward(root)
    analytic, numeric = [], []
    skipped = 0
    for t in inputs:
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        grad = t.grad.reshape(-1) if t.grad is not None else np.zeros(flat.size)
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + step
                with _trace_kinks() as plus:
                    fp = fn(inputs).item()
                flat[i] = orig - step
                with _trace_kinks() as minus:
                    fm = fn(inputs).item()
            flat[i] = orig
            if not (_same_patterns(base, plus) and _same_patterns(base, minus)):
                skipped += 1
                continue
            numeric.append((fp - fm) / (2 * step))
            analytic.append(grad[i])
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    rel = float(np.linalg.norm(a - n) / denom)
    passed = rel < tol and a.size > 0
    return CheckResult(name=name, rel_error=rel, checked=int(a.size), passed=passed, skipped_kinks=skipped)


def _t(rng, *shape, grad=True, positive=False) -> Tensor:
    x = rng.standard_normal(shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=grad, dtype=np.float64)


def _away_from_zero(rng, *shape, margin=0.05) -> Tensor:
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)
    return Tensor(x, requires_grad=True, dtype=np.float64)


def _project(out: Tensor, proj: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(proj, dtype=np.float64)))


def _projected(rng, op: Callable[..., Tensor]) -> Callable[[Sequence[Tensor]], Tensor]:
    cache: Dict[str, np.ndarray] = {}

    def fn(inputs):
        out = op(*inputs)
        if "p" not in cache:
            cache["p"] = rng.standard_normal(out.shape)
        return _project(out, cache["p"])

    return fn


def op_suite(seed: int = 0) -> List[CheckResult]:
    """Gradient checks for every differentiable primitive."""
    rng = np.random.default_rng(seed)
    results = []

    def run(name, op, inputs):
        results.append(check_gradients(_projected(rng, op), inputs, name=name, rng=rng))

    run("conv2d", lambda x, w, b: ops.conv2d(x, w, b, padding=1), [_t(rng, 2, 3, 5, 5), _t(rng, 4, 3, 3, 3), _t(rng, 4)])
    run(
        "conv2d_dilated",
        lambda x, w, b: ops.conv2d(x, w, b, padding=2, dilation=2),
        [_t(rng, 1, 2, 6, 6), _t(rng, 3, 2, 3, 3), _t(rng, 3)],
    )
    run("conv2d_strided", lambda x, w: ops.conv2d(x, w, stride=2, padding=1), [_t(rng, 1, 2, 7, 6), _t(rng, 2, 2, 3, 3)])
    run("conv2d_1x1", lambda x, w, b: ops.conv2d(x, w, b), [_t(rng, 2, 3, 4, 4), _t(rng, 5, 3, 1, 1), _t(rng, 5)])
    run("avg_pool2", ops.avg_pool2, [_t(rng, 2, 3, 4, 6)])
    run("nearest_upsample2", ops.nearest_upsample2, [_t(rng, 2, 3, 3, 2)])
    run("pixel_shuffle", lambda x: ops.pixel_shuffle(x, 2), [_t(rng, 1, 8, 2, 3)])
    run("pixel_unshuffle", lambda x: ops.pixel_unshuffle(x, 2), [_t(rng, 1, 2, 4, 6)])
    run("concat_channels", ops.concat_channels, [_t(rng, 1, 2, 3, 3), _t(rng, 1, 3, 3, 3)])
    run("slice_channels", lambda x: ops.slice_channels(x, 1, 3), [_t(rng, 1, 4, 3, 3)])
    run("leaky_relu", lambda x: ops.leaky_relu(x, 0.2), [_away_from_zero(rng, 2, 3, 4, 4)])
    run("add", ops.add, [_t(rng, 1, 2, 3, 3), _t(rng, 1, 2, 3, 3)])
    run("sub", ops.sub, [_t(rng, 1, 2, 3, 3), _t(rng, 1, 2, 3, 3)])
    run("mul", ops.mul, [_t(rng, 1, 2, 3, 3), _t(rng, 1, 2, 3, 3)])
    run("scalar_mul", lambda x: ops.scalar_mul(x, -1.7), [_t(rng, 1, 2, 3, 3)])
    run("abs", ops.abs, [_away_from_zero(rng, 1, 2, 3, 3)])
    results.append(check_gradients(lambda xs: ops.sum(xs[0]), [_t(rng, 2, 3, 4, 5)], name="sum"))

    from .train import l1_loss

    mask = Tensor((rng.random((1, 1, 4, 4)) > 0.3).astype(np.float64), dtype=np.float64)
    gt = _t(rng, 1, 1, 4, 4, grad=False)
    pred = Tensor(gt.data + np.where(rng.random((1, 1, 4, 4)) < 0.5, -1, 1) * (0.2 + rng.random((1, 1, 4, 4))), requires_grad=True, dtype=np.float64)
    results.append(check_gradients(lambda xs: l1_loss(xs[0], gt, mask), [pred], name="l1_loss"))
    return results


def _weights64(weights) -> Dict[str, Tensor]:
    return {k: Tensor(v.data.astype(np.float64), requires_grad=True, dtype=np.float64) for k, v in weights.items()}


def network_suite(seed: int = 0, max_entries: int = 6) -> List[CheckResult]:
    """End-to-end checks through HFL, MSDB and the full network on a micro input."""
    from .net import FdsrConfig, fdsr_forward, hfl_forward, init_weights, msdb_forward

    rng = np.random.default_rng(seed)
    results = []
    config = FdsrConfig(base_channels=4, guide_channels=4, alpha=0.5, scale=2, block_factor=2)

    w = _weights64(init_weights(config, seed))
    # non-zero biases so every path is exercised
    for k, t in w.items():
        if k.endswith(".b") or ".b_" in k:
            t.data[:] = rng.standard_normal(t.shape) * 0.1

    y_h = _t(rng, 1, 2, 4, 4)
    y_l = _t(rng, 1, 2, 2, 2)
    hfl_params = {k: v for k, v in w.items() if k.startswith("hfgb.hfl1.")}
    keys = sorted(hfl_params)
    proj_h = rng.standard_normal((1, 2, 4, 4))
    proj_l = rng.standard_normal((1, 2, 2, 2))

    def hfl_fn(xs):
        params = dict(zip(keys, xs[2:]))
        h, low = hfl_forward(xs[0], xs[1], params, "hfgb.hfl1", config.slope)
        return ops.add(_project(h, proj_h), _project(low, proj_l))

    results.append(check_gradients(hfl_fn, [y_h, y_l] + [hfl_params[k] for k in keys], name="hfl_forward", rng=rng))

    msdb_params = {k: v for k, v in w.items() if k.startswith("msrb.msdb1.")}
    mkeys = sorted(msdb_params)
    f = _t(rng, 1, 4, 4, 4)
    proj_m = rng.standard_normal((1, 4, 4, 4))

    def msdb_fn(xs):
        params = dict(zip(mkeys, xs[1:]))
        return _project(msdb_forward(xs[0], params, "msrb.msdb1", config.dilations, config.slope), proj_m)

    results.append(check_gradients(msdb_fn, [f] + [msdb_params[k] for k in mkeys], name="msdb_forward", rng=rng))

    rgb = Tensor(rng.random((1, 3, 8, 8)), dtype=np.float64)
    lr = Tensor(rng.random((1, 1, 4, 4)), dtype=np.float64)
    gt = Tensor(rng.random((1, 1, 8, 8)), dtype=np.float64)
    wkeys = list(w)

    def net_fn(xs):
        params = dict(zip(wkeys, xs))
        out = fdsr_forward(rgb, lr, params, config)
        return ops.sum(ops.mul(ops.sub(out, gt), ops.sub(out, gt)))

    results.append(
        check_gradients(net_fn, [w[k] for k in wkeys], name="fdsr_forward", max_entries=max_entries, rng=rng)
    )
    return results


def run_all(seed: int = 0) -> List[CheckResult]:
    return op_suite(seed) + network_suite(seed)
