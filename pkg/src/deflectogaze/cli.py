"""Command line: simulate, reconstruct, run experiments, calibrate.

Exit codes: 0 success, 2 pipeline-stage failure, 3 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .config import CalibrationConfig, ConfigError, ExperimentConfig, load_scene, load_yaml, save_scene
from .pipeline import PipelineStageError

EXIT_OK = 0
EXIT_STAGE = 2
EXIT_CONFIG = 3

log = logging.getLogger("deflectogaze")

PATTERN_SHORTHANDS = {
    "cross": "CrossSinusoid",
    "vertical": "Sinusoid",
    "horizontal": "Sinusoid",
    "checker": "Checkerboard",
    "uniform": "Uniform",
}


def parse_pattern(spec: str):
    """A pattern YAML file, or ``cross[:period]``, ``vertical[:period]``,
    ``horizontal[:period]``, ``checker[:cell]``, ``uniform[:level]``."""
    from .simulator.patterns import pattern_from_dict

    p = Path(spec)
    if p.suffix in (".yaml", ".yml") or p.is_file():
        d = load_yaml(p)
    else:
        name, _, arg = spec.partition(":")
        if name not in PATTERN_SHORTHANDS:
            raise ConfigError(f"unknown pattern {spec!r}")
        d = {"kind": PATTERN_SHORTHANDS[name]}
        try:
            val = float(arg) if arg else None
        except ValueError as e:
            raise ConfigError(f"pattern parameter must be a number: {spec!r}") from e
        if name == "cross" and val is not None:
            d.update(period_x=val, period_y=val)
        elif name in ("vertical", "horizontal"):
            d["direction"] = name
            if val is not None:
                d["period"] = val
        elif name == "checker" and val is not None:
            d["cell"] = val
        elif name == "uniform" and val is not None:
            d["level"] = val
    try:
        return pattern_from_dict(d)
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"bad pattern: {e}") from e


def cmd_simulate(args):
    from dataclasses import replace

    from .io import write_ground_truth, write_pgm, write_png
    from .simulator import ground_truth, render
    from .simulator.patterns import pattern_to_dict

    scene = load_scene(args.scene)
    pattern = parse_pattern(args.pattern)
    if args.noise is not None:
        scene = scene.with_noise(replace(scene.noise, intensity_sigma=args.noise))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    gts = ground_truth(scene, args.threads)
    images = render(scene, pattern, args.seed or 0, gts=gts, threads=args.threads)
    for i, (img, gt) in enumerate(zip(images, gts)):
        write_pgm(out / f"cam{i}.pgm", img)
        write_ground_truth(out / f"cam{i}.dgt", gt)
        if args.png:
            write_png(out / f"cam{i}.png", img)
    save_scene(out / "scene.yaml", scene)
    with open(out / "pattern.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump(pattern_to_dict(pattern), f, sort_keys=False)
    print(f"wrote {len(images)} captures to {out}")
    return EXIT_OK


def cmd_reconstruct(args):
    from .fringes import ground_truth_seed
    from .geometry import Sphere
    from .io import read_ground_truth, read_pgm, write_correspondence, write_csv, write_phase, write_ply
    from .pipeline import PipelineOptions, reconstruct
    from .simulator.patterns import CrossSinusoid, pattern_from_dict
    from .simulator.scene import SingleSphereSurface

    d = Path(args.directory)
    scene = load_scene(d / "scene.yaml")
    try:
        pattern = pattern_from_dict(load_yaml(d / "pattern.yaml"))
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"bad pattern.yaml: {e}") from e
    if not isinstance(pattern, CrossSinusoid) or pattern.period_x != pattern.period_y:
        raise ConfigError("reconstruct needs a crossed sinusoid with equal periods")
    images, gts = [], []
    for i in range(len(scene.cameras)):
        try:
            images.append(read_pgm(d / f"cam{i}.pgm"))
            gts.append(read_ground_truth(d / f"cam{i}.dgt"))
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read capture {i}: {e}") from e
    mode = args.mode
    if mode == "auto":
        mode = "sphere" if isinstance(scene.surface, SingleSphereSurface) else "two_sphere"
    opts = PipelineOptions(period=pattern.period_x, seed=args.seed or 0)
    res = reconstruct(images, scene, ground_truth_seed(gts), mode, opts)
    for v in res.views:
        write_phase(d / f"cam{v.camera_id}.dpm", v.phase_x, v.phase_y)
        write_correspondence(d / f"cam{v.camera_id}.dcm", v.corr, v.regions.labels)
    s = res.samples
    write_ply(d / "surface.ply", s.point, s.n_r)
    row = {"mode": mode, "points": len(s), "anchors": len(res.anchors)}
    if res.gaze is not None:
        m = res.model
        row.update(
            axis_x=res.gaze.direction[0], axis_y=res.gaze.direction[1], axis_z=res.gaze.direction[2],
            cornea_radius_mm=m.cornea_radius, sclera_radius_mm=m.sclera_radius,
            axis_rms_mm=res.gaze.rms_axis_residual, single_region=res.gaze.single_region,
        )
    if res.sphere_fit is not None:
        f = res.sphere_fit
        row.update(radius_mm=f.sphere.radius, scatter_um=1000 * f.scatter)
    write_csv(d / "reconstruction.csv", [row])
    write_csv(d / "timings.csv", [{"stage": k, "seconds": v} for k, v in res.timings.items()])
    print(", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def cmd_experiment(args):
    from .experiments import run_experiment

    overrides = {"seed": args.seed, "threads": args.threads, "noise": args.noise}
    cfg = ExperimentConfig.load(args.config, **overrides)
    if cfg.kind != args.kind:
        raise ConfigError(f"config describes a {cfg.kind!r} experiment, not {args.kind!r}")
    out = args.output or cfg.output
    if out is None:
        raise ConfigError("no output directory (-o or output: in the config)")
    report = run_experiment(cfg)
    paths = report.write(out, figures=not args.no_figures)
    for k, v in report.summary.items():
        print(f"{k}: {v:.6g}" if isinstance(v, float) else f"{k}: {v}")
    print(f"wrote {len(paths)} files to {out}")
    return EXIT_OK


def cmd_calibrate(args):
    from .experiments import run_calibration

    overrides = {"seed": args.seed, "threads": args.threads, "marker_noise_px": args.noise}
    cfg = CalibrationConfig.load(args.config, **overrides)
    report = run_calibration(cfg)
    out = args.output or cfg.output
    if out is not None:
        report.write(out, figures=not args.no_figures)
    for k, v in report.summary.items():
        print(f"{k}: {v:.6g}" if isinstance(v, float) else f"{k}: {v}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="deflectogaze", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument("--noise", type=float, default=None, help="override the noise level")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="render captures and ground truth of a scene")
    s.add_argument("scene", help="scene YAML")
    s.add_argument("pattern", help="pattern YAML or shorthand such as cross:80")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--png", action="store_true", help="also write 8-bit PNG previews")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reconstruct", parents=[common], help="reconstruct a simulated capture directory")
    r.add_argument("directory")
    r.add_argument("--mode", choices=("auto", "two_sphere", "sphere"), default="auto")
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("experiment", parents=[common], help="run a synthetic study")
    e.add_argument("kind", choices=("ball", "rotation", "thinning", "grid"))
    e.add_argument("-c", "--config", required=True)
    e.add_argument("-o", "--output")
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_experiment)

    c = sub.add_parser("calibrate", parents=[common], help="simulated display calibration (--noise: marker px)")
    c.add_argument("-c", "--config", required=True)
    c.add_argument("-o", "--output")
    c.add_argument("--no-figures", action="store_true")
    c.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", None) is None:
        args.threads = None if args.command in ("experiment", "calibrate") else 1
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineStageError as e:
        print(f"pipeline stage failed: {e}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
