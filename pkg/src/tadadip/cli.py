"""Command-line interface for running and evaluating reconstructions.

Volumes and sinograms are raw float32 files with a JSON sidecar header;
sinogram headers also carry the acquisition geometry so later commands can
rebuild the projector. ``--config FILE`` reads a JSON object whose keys are
option names (dashes or underscores) and whose values override the flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import classical, engine, tomo
from .toolkit import io, metrics, phantoms, visualize
from .unet import UNetConfig

log = logging.getLogger("tadadip")

METHODS = ("fbp", "tv", "dip", "tada")
METHOD_LABELS = {"fbp": "FBP", "tv": "TV (ASD-POCS)", "dip": "Vanilla DIP", "tada": "Tada-DIP"}


class CLIError(Exception):
    """Reported as a one-line diagnostic with a nonzero exit status."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(message)


# ---------------------------------------------------------------------------
# file helpers


def _save_sinogram(path, y, g: tomo.Geometry) -> None:
    io.save_volume(path, y, description=json.dumps({"kind": "sinogram", "geometry": g.to_dict()}))


def _load_sinogram(path) -> tuple[np.ndarray, tomo.Geometry]:
    y, header = io.load_volume(path, with_header=True)
    try:
        meta = json.loads(header.description)
        g = tomo.Geometry.from_dict(meta["geometry"])
    except (ValueError, KeyError, TypeError):
        raise CLIError(f"{path}: header carries no acquisition geometry (not written by `project`?)") from None
    if y.shape != g.sinogram_shape:
        raise CLIError(f"{path}: sinogram shape {y.shape} disagrees with its geometry {g.sinogram_shape}")
    return y, g


def _load_volume(path) -> np.ndarray:
    vol = io.load_volume(path)
    if vol.ndim != 3:
        raise CLIError(f"{path}: expected a 3-D volume, got shape {vol.shape}")
    return vol


def _write_rows(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(row[h]) for h in header))
    io.atomic_write_text(path, "\n".join(lines) + "\n")


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# configuration


def _dip_config(args, tada: bool) -> engine.TadaConfig:
    kwargs = dict(
        p=args.p, iterations=args.iterations, learning_rate=args.lr, ema_decay=args.ema_decay,
        seed=args.seed, eval_every=args.eval_every,
        unet=UNetConfig(depth=args.depth, base_channels=args.base_channels),
        checkpoint_every=args.checkpoint_every, checkpoint_path=args.checkpoint,
    )
    if tada:
        kwargs.update(alpha=args.alpha, beta=args.beta, gamma=args.gamma)
    return engine.TadaConfig(**kwargs)


def _asd_config(args) -> classical.AsdPocsConfig:
    return classical.AsdPocsConfig(
        iterations=args.tv_iterations, num_subsets=args.subsets, tv_steps_per_iter=args.tv_steps,
        relaxation=args.relaxation, tv_step_fraction=args.tv_step_fraction,
        nonnegativity=not args.allow_negative,
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_phantom(args):
    if args.kind == "shepp-logan":
        vol = phantoms.shepp_logan_3d(args.size)
    else:
        vol = phantoms.disk_phantom(args.size, args.radius or args.size / 4, num_slices=args.size)
    io.save_volume(args.out, vol, description=json.dumps({"kind": args.kind}))
    print(f"wrote {args.out} shape={vol.shape}")


def _geometry_for(vol, args) -> tomo.Geometry:
    if vol.shape[1] != vol.shape[2]:
        raise CLIError(f"slices must be square, got {vol.shape[1]}x{vol.shape[2]}")
    return tomo.Geometry(vol.shape[1], args.views, vol.shape[0], num_det=args.num_det,
                         det_spacing=args.det_spacing)


def cmd_project(args):
    vol = _load_volume(args.input)
    g = _geometry_for(vol, args)
    y = tomo.simulate_measurements(vol, g, noise_std=args.noise_std, seed=args.seed)
    _save_sinogram(args.out, y, g)
    print(f"wrote {args.out} shape={y.shape}")


def cmd_fbp(args):
    y, g = _load_sinogram(args.sinogram)
    rec = tomo.fbp(y, g, args.filter)
    io.save_volume(args.out, rec)
    _report(rec, args)


def cmd_tv(args):
    y, g = _load_sinogram(args.sinogram)
    result = classical.asd_pocs(y, g, _asd_config(args))
    io.save_volume(args.out, result.volume)
    if args.trace:
        _write_rows(args.trace, ("iteration", "data_residual", "tv_value"), list(result.trace_rows()))
    _report(result.volume, args)


def _run_dip(args, tada: bool):
    y, g = _load_sinogram(args.sinogram)
    gt = _load_volume(args.ground_truth) if args.ground_truth else None
    cfg = _dip_config(args, tada)
    run = engine.run_tada_dip if tada else engine.run_vanilla_dip
    result = run(y, g, cfg, ground_truth=gt)
    io.save_volume(args.out, result.volume)
    if args.trace:
        result.trace.write_csv(args.trace)
    _report(result.volume, args)


def cmd_dip(args):
    _run_dip(args, tada=False)


def cmd_tada(args):
    _run_dip(args, tada=True)


def _report(rec, args):
    print(f"wrote {args.out} shape={rec.shape}")
    if getattr(args, "ground_truth", None):
        gt = _load_volume(args.ground_truth)
        print(f"psnr={metrics.psnr(rec, gt, args.data_range):.4f} ssim={metrics.ssim(rec, gt, args.data_range):.4f}")


def cmd_metrics(args):
    a = _load_volume(args.volume)
    b = _load_volume(args.reference)
    p = metrics.psnr(a, b, args.data_range)
    s = metrics.ssim(a, b, args.data_range)
    print("psnr_db,ssim")
    print(f"{p!r},{s!r}")


def cmd_mip(args):
    vol = _load_volume(args.input)
    image = visualize.mip(vol, args.axis, args.threshold)
    visualize.save_pgm(args.out, image)
    print(f"wrote {args.out} shape={image.shape}")


def cmd_compare(args):
    if args.ground_truth:
        gt = _load_volume(args.ground_truth)
    else:
        gt = phantoms.shepp_logan_3d(args.size)
    g = _geometry_for(gt, args)
    y = tomo.simulate_measurements(gt, g, noise_std=args.noise_std, seed=args.seed)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = sorted(set(methods) - set(METHODS))
    if unknown:
        raise CLIError(f"unknown method(s) {unknown}; choose from {list(METHODS)}")
    outdir = Path(args.outdir) if args.outdir else None
    rows = []
    for m in methods:
        start = time.perf_counter()
        trace = None
        if m == "fbp":
            rec = tomo.fbp(y, g, args.filter)
        elif m == "tv":
            rec = classical.asd_pocs(y, g, _asd_config(args)).volume
        else:
            run = engine.run_tada_dip if m == "tada" else engine.run_vanilla_dip
            res = run(y, g, _dip_config(args, m == "tada"), ground_truth=gt)
            rec, trace = res.volume, res.trace
        elapsed = time.perf_counter() - start
        rows.append({
            "method": METHOD_LABELS[m],
            "views": args.views,
            "psnr": round(metrics.psnr(rec, gt, args.data_range), 4),
            "ssim": round(metrics.ssim(rec, gt, args.data_range), 4),
            "seconds": round(elapsed, 1),
        })
        if outdir is not None:
            io.save_volume(outdir / f"{m}.vol", rec)
            if trace is not None:
                trace.write_csv(outdir / f"{m}_trace.csv")
    # wall time stays out of the CSV so reruns with one seed give identical files
    header = ("method", "views", "psnr", "ssim")
    if args.out:
        _write_rows(args.out, header, rows)
    width = max(len(r["method"]) for r in rows)
    print(f"{'Method':<{width}}  {'PSNR':>8}  {'SSIM':>6}  {'time/s':>7}")
    for r in rows:
        print(f"{r['method']:<{width}}  {r['psnr']:>8.2f}  {r['ssim']:>6.3f}  {r['seconds']:>7.1f}")


# ---------------------------------------------------------------------------
# parser


def _add_geometry(p):
    p.add_argument("--views", type=int, default=30, help="number of projection angles over [0, pi)")
    p.add_argument("--num-det", type=int, default=None, help="detector bins per view (default covers the diagonal)")
    p.add_argument("--det-spacing", type=float, default=1.0)


def _add_dip(p, tada: bool):
    p.add_argument("--iterations", type=int, default=4000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--p", type=int, default=1, choices=(1, 2), help="norm exponent in the loss")
    p.add_argument("--ema-decay", type=float, default=0.99)
    p.add_argument("--eval-every", type=int, default=50)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--checkpoint", default=None, help="path for periodic EMA volume checkpoints")
    p.add_argument("--checkpoint-every", type=int, default=0)
    if tada:
        p.add_argument("--alpha", type=float, default=0.5, help="input noise level relative to max|z|")
        p.add_argument("--beta", type=float, default=1e-2, help="weight of the denoising term")
        p.add_argument("--gamma", type=float, default=1e-2, help="input blend rate toward the output")


def _add_tv(p):
    p.add_argument("--tv-iterations", type=int, default=500)
    p.add_argument("--subsets", type=int, default=30)
    p.add_argument("--tv-steps", type=int, default=50)
    p.add_argument("--relaxation", type=float, default=1.0)
    p.add_argument("--tv-step-fraction", type=float, default=0.2)
    p.add_argument("--allow-negative", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", default=None, help="JSON file whose entries override flags")
    common.add_argument("--threads", type=int, default=1,
                        help="BLAS threads; 1 gives bitwise-reproducible runs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="tadadip", description="Training-free 3D CT reconstruction experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", parents=[common], help="generate a phantom volume")
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--kind", choices=("shepp-logan", "disk"), default="shepp-logan")
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("project", parents=[common], help="forward-project a volume")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--noise-std", type=float, default=0.0)
    _add_geometry(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("fbp", parents=[common], help="filtered backprojection")
    p.add_argument("sinogram")
    p.add_argument("--out", required=True)
    p.add_argument("--filter", choices=("ramlak", "hann"), default="ramlak")
    p.add_argument("--ground-truth", default=None)
    p.add_argument("--data-range", type=float, default=1.0)
    p.set_defaults(func=cmd_fbp)

    p = sub.add_parser("tv", parents=[common], help="ASD-POCS total-variation reconstruction")
    p.add_argument("sinogram")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="CSV of per-iteration residual and TV")
    p.add_argument("--ground-truth", default=None)
    p.add_argument("--data-range", type=float, default=1.0)
    _add_tv(p)
    p.set_defaults(func=cmd_tv)

    for name, tada, helptext in (("dip", False, "Vanilla DIP"), ("tada", True, "Tada-DIP")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("sinogram")
        p.add_argument("--out", required=True)
        p.add_argument("--trace", default=None, help="CSV trace path")
        p.add_argument("--ground-truth", default=None, help="volume for PSNR/SSIM tracing")
        p.add_argument("--data-range", type=float, default=1.0)
        _add_dip(p, tada)
        p.set_defaults(func=cmd_tada if tada else cmd_dip)

    p = sub.add_parser("metrics", parents=[common], help="PSNR and SSIM between two volumes")
    p.add_argument("volume")
    p.add_argument("reference")
    p.add_argument("--data-range", type=float, default=1.0)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("mip", parents=[common], help="maximum intensity projection to PGM")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--threshold", type=float, default=0.45)
    p.set_defaults(func=cmd_mip)

    p = sub.add_parser("compare", parents=[common], help="run several methods on one setup")
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--ground-truth", default=None, help="volume to use instead of the phantom")
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--filter", choices=("ramlak", "hann"), default="ramlak")
    p.add_argument("--out", default=None, help="summary CSV")
    p.add_argument("--outdir", default=None, help="directory for reconstructions and traces")
    p.add_argument("--data-range", type=float, default=1.0)
    _add_geometry(p)
    _add_tv(p)
    _add_dip(p, tada=True)
    p.set_defaults(func=cmd_compare)
    return parser


def _apply_config(args, parser_for_command) -> None:
    path = Path(args.config)
    try:
        overrides = json.loads(path.read_text())
    except FileNotFoundError:
        raise CLIError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CLIError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(overrides, dict):
        raise CLIError(f"config file {path} must hold a JSON object")
    known = vars(args)
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("func", "command", "config"):
            raise CLIError(f"config file {path}: unknown option {key!r}")
        setattr(args, dest, value)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            _apply_config(args, parser)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        with _thread_limit(args.threads):
            args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


def _thread_limit(threads: int):
    return threadpool_limits(limits=max(1, int(threads)))


if __name__ == "__main__":
    sys.exit(main())
