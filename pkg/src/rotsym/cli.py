"""Command-line entry point.

Exit codes: 0 success, 1 check failure, 2 input error, 3 scene pairing error.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from rotsym import io
from rotsym.errors import ConfigError, IdMismatchError, RotsymError
from rotsym.geometry import RotationGroup
from rotsym.matching import MatchConfig
from rotsym.metrics import DEFAULT_DILATION, DEFAULT_TAU, DEFAULT_THRESHOLDS, default_workers, evaluate
from rotsym.projection import DEFAULT_DEPTHS, DEFAULT_FOCAL, CameraGridSpec, CameraIntrinsics, cca_reference_points

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_PAIRING = 0, 1, 2, 3


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _config_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    bundled = resources.files("rotsym") / "configs" / (name if name.endswith(".synth") else name + ".synth")
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"{name}: no such config file or bundled config")


def load_synth_config(path, strict: bool = False):
    from rotsym.synth import NoiseSpec, SynthConfig

    doc = io.load_json(_config_path(str(path)))
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = sorted(set(doc) - {"synth", "noise"})
    if unknown and strict:
        raise ConfigError(f"{path}: unknown section(s) {unknown}")
    try:
        cfg = SynthConfig.from_dict(doc.get("synth", {}), strict)
        noise = NoiseSpec.from_dict(doc["noise"], strict) if doc.get("noise") is not None else None
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cfg, noise


def cmd_synth(args) -> int:
    from rotsym.synth import NoiseSpec, generate

    cfg, noise = load_synth_config(args.config, args.strict)
    if args.noise == "zero":
        noise = NoiseSpec.zero()
    elif noise is None and args.pred_out:
        noise = NoiseSpec.zero()
    workers = args.workers or default_workers()
    gts, preds = generate(cfg, noise if args.pred_out else None, workers=workers)
    io.write_scenes(gts, args.out)
    if args.pred_out:
        io.write_scenes(preds, args.pred_out)
    print(f"wrote {len(gts)} scenes to {args.out}" + (f" and {args.pred_out}" if args.pred_out else ""),
          file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    gt = io.read_scenes(args.gt, strict=args.strict)
    pred = io.read_scenes(args.pred, strict=args.strict)
    report = evaluate(
        gt, pred,
        tau=args.tau,
        vertex_tau=args.vertex_tau,
        f1=args.f1,
        dilation=args.dilate,
        thresholds=args.thresholds,
        shape=args.dilate_shape,
        workers=args.workers or default_workers(),
        match_cfg=MatchConfig(),
    )
    text = io.dumps(report) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_fit(args) -> int:
    from rotsym.fit import fit_polygon

    scenes = io.read_scenes(args.path, strict=args.strict)
    groups = {RotationGroup.parse(g) for g in args.group} if args.group else None
    entries, out_scenes = [], []
    attempted = failed = 0
    for scene in scenes:
        K = scene.camera
        fitted = []
        for j, poly in enumerate(scene.polygons):
            if poly.group is None or not poly.vertices or (groups and poly.group not in groups):
                continue
            attempted += 1
            entry = {"scene": scene.id, "index": j, "group": poly.group.value}
            try:
                rep = fit_polygon(poly, poly.group, K)
            except (RotsymError, ValueError) as exc:
                failed += 1
                entry["error"] = str(exc)
                entries.append(entry)
                continue
            q = rep.params
            entry.update({
                "converged": rep.converged,
                "iterations": rep.iterations,
                "rms_reprojection": rep.rms_reprojection,
                "l1_error": rep.l1_error,
                "params": {"c": list(q.c), "s": list(q.s), "a": list(q.a), "beta": q.beta},
            })
            entries.append(entry)
            new = rep.polygon(K)
            if poly.scores is not None:
                new = type(new)(center=new.center, vertices=new.vertices, group=new.group,
                                scores=poly.scores, params=new.params)
            fitted.append(new)
        out_scenes.append(type(scene)(id=scene.id, width=scene.width, height=scene.height,
                                      polygons=tuple(fitted), intrinsics=K))
    report = {"attempted": attempted, "failed": failed, "fits": entries}
    text = io.dumps(report) + "\n"
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.out:
        io.write_scenes(out_scenes, args.out)
    if attempted and failed == attempted:
        print("all fits failed", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_grid(args) -> int:
    try:
        grid = CameraGridSpec(nx=args.nx, ny=args.ny, x_range=args.x_range, y_range=args.y_range, depths=args.depths)
        K = CameraIntrinsics(
            f=args.f,
            cx=args.width / 2 if args.cx is None else args.cx,
            cy=args.height / 2 if args.cy is None else args.cy,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    samples = cca_reference_points(grid, K, args.width, args.height)
    lines = ["i,j,d,x,y,z,u,v,in_bounds"]
    for i in range(grid.nx):
        for j in range(grid.ny):
            for d in range(len(grid.depths)):
                u, v = samples.uv[i, j, d]
                lines.append(
                    f"{i},{j},{d},{io._fmt_float(float(samples.xs[i]))},{io._fmt_float(float(samples.ys[j]))},"
                    f"{io._fmt_float(float(samples.depths[d]))},{io._fmt_float(float(u))},{io._fmt_float(float(v))},"
                    f"{int(samples.in_bounds[i, j, d])}"
                )
    _emit("\n".join(lines) + "\n", args.out)
    print(f"in-bounds fraction: {samples.in_bounds_fraction:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_check(args) -> int:
    from rotsym.checks import run_checks

    failures = run_checks(args.n, seed=args.seed)
    for msg in failures:
        print(msg, file=sys.stderr)
    print(f"{args.n} samples, {len(failures)} failure(s)")
    return EXIT_CHECK if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rotsym", description="Rotation-symmetry geometry, matching and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic ground truth (and predictions)")
    p.add_argument("config", help="config file, or the name of a bundled config (e.g. smoke)")
    p.add_argument("--out", required=True, help="ground-truth scene file")
    p.add_argument("--pred-out", help="perturbed prediction scene file")
    p.add_argument("--noise", choices=["config", "zero"], default="config")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="center/vertex AP and optional max-F1")
    p.add_argument("gt")
    p.add_argument("pred")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--vertex-tau", type=float, default=None, help="vertex threshold factor (default: --tau)")
    p.add_argument("--f1", action="store_true", help="also render score maps and report max-F1")
    p.add_argument("--dilate", type=int, default=DEFAULT_DILATION)
    p.add_argument("--dilate-shape", choices=["disk", "square"], default="disk")
    p.add_argument("--thresholds", type=int, default=DEFAULT_THRESHOLDS)
    p.add_argument("--out", help="also write the report here")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fit", help="fit 3D parameters to observed polygons")
    p.add_argument("path")
    p.add_argument("--group", action="append", help="only fit this group (repeatable)")
    p.add_argument("--report", help="fit report file (default: stdout)")
    p.add_argument("--out", help="re-projected scene file")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("grid", help="dump camera-query reference points")
    p.add_argument("--nx", type=int, default=50)
    p.add_argument("--ny", type=int, default=50)
    p.add_argument("--x-range", type=_floats, default=(-1.0, 1.0))
    p.add_argument("--y-range", type=_floats, default=(-1.0, 1.0))
    p.add_argument("--depths", type=_floats, default=DEFAULT_DEPTHS)
    p.add_argument("--width", type=int, default=1280)
    p.add_argument("--height", type=int, default=720)
    p.add_argument("--f", type=float, default=DEFAULT_FOCAL)
    p.add_argument("--cx", type=float, default=None)
    p.add_argument("--cy", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("check", help="randomized Jacobian and invariant self-test")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except IdMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PAIRING
    except (ConfigError, RotsymError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
