"""Command-line interface: fit, synth, estimate, eval, plot."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import errors as E
from .evaluation import MetricsReport, ap_curves, instance_metrics, write_curves_csv
from .io import PlyError, read_scene, write_json, write_scene
from .labeling import LabeledPointCloud, LabelNoise, flip_labels
from .optimizer import OptimizerConfig, RansacConfig
from .pipeline import EstimationResult, estimate
from .primitives import FitConfig, LinearShapeBasis, decode
from .shapes import CATEGORIES, SymmetrySpec, get_category
from .synth import CameraConfig, CorruptionConfig, build_category_model, synth_scenes

log = logging.getLogger("primpose")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

PROFILES = {
    "desk": {"n_primitives": 64, "quads": 10_000, "instances": 40, "latent_dim": 8},
    "paper-parity": {"n_primitives": 256, "quads": 1_000_000, "instances": 128, "latent_dim": 64},
}

CONFIG_ERRORS = (
    E.InsufficientSamples, E.TooFewInstances, E.CountMismatch, E.DimensionMismatch,
    E.ParamsOutOfRange, E.AngleNotInSpec, E.LabelSetTooSmall,
)


class ConfigError(Exception):
    pass


def _profile(args, key):
    v = getattr(args, key, None)
    return PROFILES[args.profile][key] if v is None else v


def _load_basis(model_dir) -> LinearShapeBasis:
    p = Path(model_dir)
    return LinearShapeBasis.load(p / "basis.json" if p.is_dir() else p)


def _scene_dirs(root) -> list:
    root = Path(root)
    if (root / "cloud.ply").exists():
        return [root]
    dirs = sorted(d for d in root.iterdir() if (d / "cloud.ply").exists())
    if not dirs:
        raise FileNotFoundError(f"no scene directories under {root}")
    return dirs


# --- commands ---------------------------------------------------------------

def cmd_fit(args) -> int:
    if not args.trunc > 0:
        raise ConfigError("--trunc must be > 0")
    spec = get_category(args.category)
    n_c = _profile(args, "n_primitives")
    D = _profile(args, "latent_dim")
    n_inst = _profile(args, "instances")
    if n_c < 1 or D < 1:
        raise ConfigError("--n-primitives and --latent-dim must be >= 1")
    fit_cfg = FitConfig(iterations=args.fit_iters) if args.fit_iters else None
    model = build_category_model(spec, n_inst, n_c, D, args.trunc, args.seed, fit_cfg)
    out = Path(args.out)
    write_json(out / "basis.json", model.basis.to_dict())
    for k, ps in enumerate(model.instances):
        write_json(out / "prims" / f"instance_{k:03d}.json", ps.to_dict())
    summary = {
        "category": spec.name,
        "instances": n_inst,
        "n_primitives": n_c,
        "latent_dim": D,
        "trunc": args.trunc,
        "seed": args.seed,
        "fit_loss": [float(v) for v in model.fit_losses],
        "recon_chamfer": [float(v) for v in model.recon_chamfer],
        "params": model.params,
    }
    write_json(out / "fit_summary.json", summary)
    fl = np.asarray(model.fit_losses)
    print(f"{spec.name}: {n_inst} instances, fit loss mean {fl.mean():.5f} max {fl.max():.5f}, "
          f"recon chamfer max {max(model.recon_chamfer):.5f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    basis = _load_basis(args.model)
    spec = get_category(args.category or basis.category)
    cc = CorruptionConfig(args.sigma, args.outliers, args.label_noise)
    cam = CameraConfig(args.width, args.height, args.focal)
    scenes = synth_scenes(basis, spec, args.n, args.seed, cam, cc)
    out = Path(args.out)
    for i, sc in enumerate(scenes):
        write_scene(out / f"scene_{i:04d}", sc)
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


def _estimate_one(scene_dir: Path, out_dir: Path, basis, cfg, args):
    try:
        lc, _ = read_scene(scene_dir)
        if args.label_noise > 0:
            noise = LabelNoise(args.label_noise, (args.seed, 7))
            lc = LabeledPointCloud(lc.points, flip_labels(lc.labels, basis.n_primitives, noise))
        res = estimate(lc, basis, cfg, per_label_weights=args.per_label_weights)
        d = res.to_dict()
        if args.no_timings:
            d.pop("timings_ms")
        write_json(out_dir / "result.json", d)
        res.trace.write_csv(out_dir / "trace.csv")
        err = out_dir / "error.json"
        if err.exists():
            err.unlink()
        return scene_dir.name, None
    except (E.PrimposeError, PlyError, OSError, ValueError) as exc:
        info = {"scene": scene_dir.name, "error": type(exc).__name__, "message": str(exc)}
        write_json(out_dir / "error.json", info)
        stale = out_dir / "result.json"
        if stale.exists():
            stale.unlink()
        return scene_dir.name, info


def cmd_estimate(args) -> int:
    basis = _load_basis(args.model)
    try:
        cfg = OptimizerConfig(
            iterations=args.iters,
            step=args.step,
            m=_profile(args, "quads"),
            ransac=RansacConfig() if args.ransac else None,
            seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    dirs = _scene_dirs(args.scenes)
    out_root = Path(args.out) if args.out else None

    def job(d):
        od = out_root / d.name if out_root and len(dirs) > 1 else (out_root or d)
        return _estimate_one(d, od, basis, cfg, args)

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        results = list(pool.map(job, dirs))
    failures = [info for _, info in results if info is not None]
    for f in failures:
        print(f"{f['scene']}: {f['error']}: {f['message']}", file=sys.stderr)
    print(f"estimated {len(results) - len(failures)}/{len(results)} scenes")
    return EXIT_OK


def cmd_eval(args) -> int:
    basis = _load_basis(args.model)
    dirs = _scene_dirs(args.scenes)
    res_root = Path(args.results) if args.results else None
    instances, skipped = [], []
    for d in dirs:
        rd = res_root / d.name if res_root and len(dirs) > 1 else (res_root or d)
        rp = rd / "result.json"
        if not rp.exists():
            skipped.append(d.name)
            continue
        _, gt = read_scene(d)
        with open(rp) as f:
            res = EstimationResult.from_dict(json.load(f))
        sym = SymmetrySpec.from_dict(gt["symmetry"])
        gt_z = np.asarray(gt["z"], dtype=np.float64)
        instances.append(instance_metrics(
            d.name, gt.get("category", basis.category), res.pose, gt["pose"],
            decode(basis, res.z_hat), decode(basis, gt_z), sym, float(gt["diameter"]),
        ))
    if not instances:
        raise E.EmptyList("no scene has a result to evaluate")
    report = MetricsReport(instances)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "metrics.csv")
    summary = report.summary()
    summary["skipped"] = skipped
    write_json(out / "summary.json", summary)
    write_curves_csv(ap_curves(instances), out / "curves.csv")
    print(json.dumps({k: v for k, v in summary.items() if k != "skipped"}, indent=1))
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_ap_curves, plot_traces, read_curves_csv, read_trace_csv

    out = Path(args.out)
    written = []
    if args.eval:
        written += plot_ap_curves(read_curves_csv(Path(args.eval) / "curves.csv"), out)
    if args.traces:
        root = Path(args.traces)
        files = sorted(root.glob("*/trace.csv")) or sorted(root.glob("trace.csv"))
        if not files:
            raise FileNotFoundError(f"no trace.csv under {root}")
        traces = {f.parent.name: read_trace_csv(f) for f in files}
        written.append(plot_traces(traces, out / "traces.svg"))
    if not written:
        raise ConfigError("nothing to plot: pass --eval and/or --traces")
    for p in written:
        print(p)
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="primpose", description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    f = sub.add_parser("fit", help="fit primitives to a procedural category and build its shape basis")
    f.add_argument("--category", required=True, choices=sorted(CATEGORIES))
    f.add_argument("--instances", type=int)
    f.add_argument("--n-primitives", dest="n_primitives", type=int)
    f.add_argument("--trunc", type=float, default=0.02)
    f.add_argument("--latent-dim", dest="latent_dim", type=int)
    f.add_argument("--fit-iters", dest="fit_iters", type=int, default=None)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("synth", help="render posed partial observations from a shape basis")
    s.add_argument("--model", required=True, help="model directory or basis.json")
    s.add_argument("--category", choices=sorted(CATEGORIES))
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--sigma", type=float, default=0.0, help="point noise, fraction of diameter")
    s.add_argument("--outliers", type=float, default=0.0)
    s.add_argument("--label-noise", dest="label_noise", type=float, default=0.0)
    s.add_argument("--width", type=int, default=160)
    s.add_argument("--height", type=int, default=120)
    s.add_argument("--focal", type=float, default=200.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("estimate", help="estimate shape and pose for each scene")
    e.add_argument("--model", required=True)
    e.add_argument("--scenes", required=True, help="scene directory or a directory of scenes")
    e.add_argument("--out", help="output root (default: alongside each scene)")
    e.add_argument("--iters", type=int, default=100)
    e.add_argument("--step", type=float, default=0.02)
    e.add_argument("--quads", type=int)
    e.add_argument("--ransac", action="store_true")
    e.add_argument("--label-noise", dest="label_noise", type=float, default=0.0)
    e.add_argument("--per-label-weights", dest="per_label_weights", action="store_true")
    e.add_argument("--no-timings", dest="no_timings", action="store_true",
                   help="omit wall-clock timings so outputs are byte-reproducible")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("eval", help="score results against ground truth")
    v.add_argument("--model", required=True)
    v.add_argument("--scenes", required=True)
    v.add_argument("--results", help="result root if estimate used --out")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="write SVG AP curves and optimization traces")
    pl.add_argument("--eval", help="directory holding curves.csv")
    pl.add_argument("--traces", help="directory of per-scene trace.csv files")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return args.func(args)
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CONFIG_ERRORS as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except E.PrimposeError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, PlyError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
