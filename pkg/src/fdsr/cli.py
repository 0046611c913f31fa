"""Command-line entry point: ``fdsr <subcommand> ...``.

Every subcommand writes its machine-readable results (JSON with a
``schema_version`` field) into files; diagnostics go to stderr. The exit code
is 0 only on full success.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import config as cfgmod
from .data.holes import fill_holes_colorization
from .data.manifest import adapt_external, load_manifest
from .data.pnm import PnmError, read_pgm16, read_ppm, write_pgm16, write_pgm8, write_ppm
from .data.resample import to_mm
from .data.synth import synth_scene
from .metrics import MetricsReport, bench_forward, evaluate_sample, format_table
from .net import ABLATIONS, fdsr_forward, init_weights
from .ops import bicubic_resize_array
from .tensor import Tensor, corrupt_backward, no_grad
from .train import fit, make_pairs, prepare, predict
from .weights_io import load_config, load_weights, save_weights

SCHEMA_VERSION = 1

log = logging.getLogger("fdsr")


class CliError(Exception):
    """A user-facing failure: message to stderr, exit code 1."""


def _write_json(path: Path, payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _size(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _run_config(args, extra: Optional[dict] = None) -> cfgmod.RunConfig:
    overrides = dict(kv.split("=", 1) for kv in (args.set or []))
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    overrides.update({k: v for k, v in (extra or {}).items() if v is not None})
    return cfgmod.resolve(args.config, overrides, preset=getattr(args, "preset", "default"))


def _require_file(path: Optional[str], what: str) -> Path:
    if path is None:
        raise CliError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {p}")
    return p


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _run_config(args)
    seed = cfg.train.seed
    s = cfg.fdsr.scale
    for i in range(args.n):
        smp = synth_scene(seed * 100_003 + i, tuple(args.hr_size), s, r=cfg.fdsr.block_factor)
        d = out / smp.id
        d.mkdir(exist_ok=True)
        write_ppm(d / "rgb.ppm", smp.rgb)
        write_pgm16(d / "hr_depth.pgm", smp.hr_depth)
        write_pgm16(d / "lr_depth.pgm", smp.lr_depth)
    manifest = adapt_external(out, "synthetic", scale=s, test_ratio=args.test_ratio)
    manifest.root = "."
    manifest.save(out / "manifest.json")
    cfgmod.write_resolved(cfg, out)
    log.info("wrote %d samples to %s", args.n, out)


def cmd_train(args) -> None:
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    cfg = _run_config(args, {"fdsr.ablation": args.ablation, "train.max_steps": args.max_steps})
    if manifest.scale != cfg.fdsr.scale:
        raise CliError(f"manifest scale {manifest.scale} differs from fdsr.scale {cfg.fdsr.scale}")
    out = Path(args.out)
    cfgmod.write_resolved(cfg, out)
    train = list(manifest.iter_samples("train"))
    val = list(manifest.iter_samples(args.val_split)) if args.val_split else []
    if not train:
        raise CliError("manifest has no training samples")
    init = load_weights(args.init) if args.init else None
    resume = out / "checkpoint" if args.resume else None
    result = fit(train, cfg.fdsr, cfg.train, val, out_dir=out, init=init, resume_from=resume)
    save_weights(out / "weights.fdsrw", result.weights, cfg.fdsr)
    last = result.log[-1] if result.log else {}
    _write_json(
        out / "train_report.json",
        {
            "ablation": cfg.fdsr.ablation,
            "iterations": result.state.iteration,
            "final_train_loss": last.get("train_loss"),
            "final_val_rmse_cm": last.get("val_rmse_cm"),
            "best_val_rmse_cm": None if not val else result.state.best_val_rmse,
            "num_train": len(train),
            "num_val": len(val),
        },
    )


def _predict_m(sample, weights, cfg, regime: str) -> tuple:
    """``(prediction, ground truth, raw LR)`` in metres for one sample."""
    s = cfg.fdsr.scale
    if weights is None:
        lr, _, hr = make_pairs(sample, regime, s)
        H, W = hr.shape
        pred = bicubic_resize_array(lr.astype(np.float64) / 1000.0, H, W)
    else:
        p = prepare(sample, regime, s, cfg.train.depth_scale_m)
        pred = predict(p, weights, cfg.fdsr).astype(np.float64) * cfg.train.depth_scale_m
        hr = sample.hr_depth
    raw = sample.lr_depth if sample.lr_depth is not None else make_pairs(sample, "downsampling", s)[0]
    return pred, hr.astype(np.float64) / 1000.0, raw


def cmd_eval(args) -> None:
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    if (args.weights is None) == (args.baseline is None):
        raise CliError("give exactly one of --weights or --baseline bicubic")
    weights = None
    overrides = {}
    if args.weights:
        wpath = _require_file(args.weights, "weights")
        weights = load_weights(wpath, requires_grad=False)
        overrides = {f"fdsr.{k}": v for k, v in load_config(wpath).to_dict().items()}
    cfg = _run_config(args, {k: (",".join(map(str, v)) if isinstance(v, list) else v) for k, v in overrides.items()})
    if manifest.scale != cfg.fdsr.scale:
        raise CliError(f"manifest scale {manifest.scale} differs from fdsr.scale {cfg.fdsr.scale}")
    method = "bicubic" if weights is None else f"fdsr[{cfg.fdsr.ablation}]"
    report = MetricsReport(method=method, config=cfg.metrics)
    samples = list(manifest.iter_samples(args.split))
    if not samples:
        raise CliError(f"manifest has no samples in split {args.split!r}")
    for smp in samples:
        pred, gt, raw = _predict_m(smp, weights, cfg, args.regime)
        report.samples.append(evaluate_sample(smp.id, pred, gt, raw, cfg.metrics))
        if report.samples[-1].edge_mask_empty:
            report.notes.append(f"{smp.id}: empty edge mask, edge error reported as 0")
    out = Path(args.out)
    cfgmod.write_resolved(cfg, out)
    d = report.to_dict()
    d.update({"split": args.split, "regime": args.regime})
    _write_json(out / "metrics.json", d)
    table = format_table([report])
    (out / "metrics.txt").write_text(table + "\n")
    print(table)


def cmd_infer(args) -> None:
    rgb = read_ppm(_require_file(args.rgb, "--rgb"))
    lr = read_pgm16(_require_file(args.depth, "--depth"))
    wpath = _require_file(args.weights, "--weights")
    config = load_config(wpath)
    weights = load_weights(wpath, requires_grad=False)
    s = config.scale
    if rgb.shape[:2] != (lr.shape[0] * s, lr.shape[1] * s):
        raise CliError(f"rgb {rgb.shape[:2]} is not {s}x the depth {lr.shape}")
    scale_m = args.depth_scale_m
    lr_t = Tensor((lr.astype(np.float32) / np.float32(1000.0 * scale_m))[None, None])
    rgb_t = Tensor((rgb.astype(np.float32) / np.float32(255.0)).transpose(2, 0, 1)[None].copy())
    with no_grad():
        out = fdsr_forward(rgb_t, lr_t, weights, config).data[0, 0].astype(np.float64) * scale_m
    hr = np.clip(to_mm(np.maximum(out, 0.0)), 0, 65535).astype(np.uint16)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_pgm16(out_path, hr)
    if args.preview:
        v = hr[hr > 0]
        lo, hi = (float(v.min()), float(v.max())) if v.size else (0.0, 1.0)
        img = np.where(hr > 0, 255.0 * (hr - lo) / max(hi - lo, 1.0), 0.0)
        write_pgm8(args.preview, np.clip(np.rint(img), 0, 255).astype(np.uint8))


def cmd_fill(args) -> None:
    depth = read_pgm16(_require_file(args.depth, "--depth"))
    rgb = read_ppm(_require_file(args.rgb, "--rgb"))
    if rgb.shape[:2] != depth.shape:
        raise CliError(f"rgb {rgb.shape[:2]} and depth {depth.shape} sizes differ")
    filled = fill_holes_colorization(depth, rgb)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pgm16(out, filled)


def cmd_bench(args) -> None:
    if args.weights:
        wpath = _require_file(args.weights, "--weights")
        config, weights = load_config(wpath), load_weights(wpath, requires_grad=False)
        cfg = None
    else:
        cfg = _run_config(args)
        config, weights = cfg.fdsr, init_weights(cfg.fdsr, cfg.train.seed)
    res = bench_forward(weights, config, tuple(args.size), args.reps, seed=args.seed or 0)
    out = Path(args.out)
    if cfg is not None:
        cfgmod.write_resolved(cfg, out)
    _write_json(
        out / "bench.json",
        {
            "reps": res.reps,
            "times_ms": res.times_ms,
            "median_ms": res.median_ms,
            "min_ms": res.min_ms,
            "hr_size": list(res.hr_size),
            "params": res.params,
            "macs": res.macs,
            "device": res.device,
            "fdsr": config.to_dict(),
        },
    )


def cmd_gradcheck(args) -> None:
    from .gradcheck import network_suite, op_suite

    seed = args.seed or 0
    ctx = corrupt_backward(args.corrupt, args.corrupt_factor) if args.corrupt else nullcontext()
    with ctx:
        results = op_suite(seed) + network_suite(seed)
    out = Path(args.out)
    _write_json(
        out / "gradcheck.json",
        {
            "seed": seed,
            "corrupted_op": args.corrupt,
            "results": [r.to_dict() for r in results],
            "passed": all(r.passed for r in results),
        },
    )
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<20} rel_error={r.rel_error:.3e} checked={r.checked}", file=sys.stderr)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CliError(f"gradient check failed for: {', '.join(failed)}")


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file (section.key form)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--out", default="out", help="output directory (file for infer/fill)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="fdsr", description="Fast guided depth super-resolution toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset and manifest")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--hr-size", type=_size, default=(128, 128), metavar="HxW")
    p.add_argument("--test-ratio", type=float, default=0.2)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model from a manifest")
    p.add_argument("--manifest")
    p.add_argument("--preset", default="default", choices=sorted(cfgmod.PRESETS))
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--val-split", choices=("train", "test"))
    p.add_argument("--init", help="initial weights file")
    p.add_argument("--resume", action="store_true", help="continue from <out>/checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate weights or a baseline on a manifest split")
    p.add_argument("--manifest")
    p.add_argument("--weights")
    p.add_argument("--baseline", choices=("bicubic",))
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--regime", default="downsampling", choices=("downsampling", "real_world"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", parents=[common], help="super-resolve one LR depth map")
    p.add_argument("--rgb")
    p.add_argument("--depth")
    p.add_argument("--weights")
    p.add_argument("--preview", help="optional 8-bit PGM visualisation")
    p.add_argument("--depth-scale-m", type=float, default=10.0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("fill", parents=[common], help="fill depth holes guided by an aligned RGB image")
    p.add_argument("--depth")
    p.add_argument("--rgb")
    p.set_defaults(func=cmd_fill)

    p = sub.add_parser("bench", parents=[common], help="time the forward pass and count params/MACs")
    p.add_argument("--weights")
    p.add_argument("--size", type=_size, default=(480, 640), metavar="HxW")
    p.add_argument("--reps", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every backward rule")
    p.add_argument("--corrupt", metavar="OP", help="test hook: perturb this op's backward rule")
    p.add_argument("--corrupt-factor", type=float, default=1.01)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                args.func(args)
        else:
            args.func(args)
    except (CliError, cfgmod.ConfigError, PnmError, FileNotFoundError, ValueError) as e:
        print(f"fdsr {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
