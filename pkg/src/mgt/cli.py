"""Command line entry point: ``mgt <verb> [options]``.

Maps are passed as manifest files (``mgt gallery --emit`` writes them).
Results are JSON on stdout, or in the file named by ``--out``; ``verify``
treats ``--out`` as a directory and exits nonzero iff a check fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .chart import (Chart, build_chart, check_404, check_image_positive, check_preimage_vertical,
                    verify_normal_form)
from .content import content_estimate
from .density import LadderSpec, density_field, density_profile
from .errors import MgtError
from .gallery import GALLERY, gallery_spec
from .harness import ExperimentConfig, emit_plot_data, load_config, run_suite
from .io import dumps, load_manifest, load_points, manifest_dict, save_manifest, write_json
from .jacobian import approx_derivative, check_density_equals_jacobian, jacobian_n
from .metric import MetricSpace, load_metric_csv
from .partition import check_prop51, nm_content_dyadic

log = logging.getLogger("mgt")


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _threads(args, cfg: ExperimentConfig | None = None) -> int:
    env = os.environ.get("MGT_THREADS")
    if env:
        return max(1, int(env))
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    return cfg.threads if cfg is not None else 1


def _config(args) -> ExperimentConfig:
    return load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()


def _ladder(args) -> LadderSpec:
    count, factor = args.ladder_count, args.ladder_factor
    if getattr(args, "radii", None) is not None:
        count, factor = int(args.radii[0]), float(args.radii[1])
    return LadderSpec(count=count, factor=factor, top=args.ladder_top)


def _emit(obj, args) -> None:
    out = getattr(args, "out", None)
    if out:
        write_json(obj, out)
    else:
        sys.stdout.write(dumps(obj))


# ---------------------------------------------------------------------------
# verbs


def cmd_content(args) -> int:
    if args.map:
        fmap = load_manifest(args.map)
        n = args.n or fmap.n
        est = content_estimate(fmap.values(), n, fmap.target, method=args.method, rho=args.rho,
                               cell=args.cell, lip=fmap.grid_lipschitz, h=fmap.h_max)
    elif args.metric:
        space = load_metric_csv(args.metric)
        ids = list(space.ids) if args.points is None else [s.strip() for s in Path(args.points).read_text().split()]
        est = content_estimate(ids, args.n, space, method=args.method, rho=args.rho or 0.0)
    else:
        pts = load_points(args.points)
        est = content_estimate(pts, args.n, MetricSpace.euclidean(pts.shape[1]), method=args.method,
                               rho=args.rho, cell=args.cell)
    _emit(est.to_dict(), args)
    return 0


def cmd_density(args) -> int:
    fmap = load_manifest(args.map)
    ladder = _ladder(args)
    if args.point is not None:
        prof = density_profile(fmap, args.point, args.n, ladder, shape=args.shape)
        if args.csv:
            emit_plot_data(prof, args.csv)
        _emit(prof.to_dict(), args)
        return 0
    profiles = density_field(fmap, args.stride, args.n, ladder, shape=args.shape, threads=_threads(args))
    if args.csv:
        emit_plot_data(profiles, args.csv)
    out = getattr(args, "out", None)
    if out and str(out).endswith(".csv"):
        emit_plot_data(profiles, out)
        return 0
    _emit({"ladder": ladder.to_dict(), "profiles": [p.to_dict() for p in profiles]}, args)
    return 0


def cmd_jacobian(args) -> int:
    fmap = load_manifest(args.map)
    ds = approx_derivative(fmap, args.point, args.h_fd)
    n = args.n or fmap.n
    out = ds.to_dict()
    out["n"] = n
    out["jacobian"] = jacobian_n(ds, n) if ds.matrix.shape[0] == n else None
    _emit(out, args)
    return 0


def cmd_verify_prop52(args) -> int:
    fmap = load_manifest(args.map)
    report = check_density_equals_jacobian(fmap, args.stride, _ladder(args), args.n, tol=args.tol,
                                           threads=_threads(args))
    _emit(report, args)
    return 0 if report["fraction_within_tol"] >= args.fraction else 1


def cmd_nm_content(args) -> int:
    fmap = load_manifest(args.map)
    res = nm_content_dyadic(fmap, args.n, args.m, args.depth, threads=_threads(args))
    if args.csv:
        emit_plot_data(res, args.csv)
    _emit(res.to_dict(), args)
    return 0


def cmd_verify_prop51(args) -> int:
    fmap = load_manifest(args.map)
    report = check_prop51(fmap, args.n, args.m, args.depth, _ladder(args), args.stride, args.factor,
                          threads=_threads(args))
    _emit(report, args)
    return 0 if report["holds"] else 1


def cmd_chart(args) -> int:
    fmap = load_manifest(args.map)
    chart = build_chart(fmap, args.center, args.n)
    report, _ = verify_normal_form(chart, fmap)
    out = chart.to_dict()
    out["residual_summary"] = report
    _emit(out, args)
    return 0


def cmd_chart_verify(args) -> int:
    fmap = load_manifest(args.map)
    chart = Chart.from_dict(json.loads(Path(args.chart).read_text(encoding="utf-8")))
    report, K = verify_normal_form(chart, fmap, args.stride, args.tau)
    out = {"normal_form": report}
    if len(K):
        out["slice_inequality"] = check_404(chart, fmap, K)
        out["verticality"] = check_preimage_vertical(chart, fmap, K, args.tol_img)
        out["image_content"] = check_image_positive(fmap, K)
    _emit(out, args)
    return 0


def cmd_gallery(args) -> int:
    if args.list or not args.emit:
        for name, desc in GALLERY.items():
            print(f"{name:12s} {desc}")
        return 0
    spec = gallery_spec(args.emit, args.grid, args.N)
    if getattr(args, "out", None):
        save_manifest(spec, args.out)
    else:
        sys.stdout.write(dumps(manifest_dict(spec)))
    return 0


def cmd_verify(args) -> int:
    cfg = _config(args)
    out_dir = Path(getattr(args, "out", None) or cfg.out)
    report = run_suite(cfg, _threads(args, cfg), only=args.only)
    js, cs = report.save(out_dir)
    for c in report.checks:
        line = f"{c.id} {c.status.upper():4s} {c.title}"
        if c.reason:
            line += f" ({c.reason})"
        print(line)
    print(f"report: {js} {cs}")
    return 1 if report.failed else 0


def cmd_emit(args) -> int:
    fmap = load_manifest(args.map)
    if args.what == "partition":
        emit_plot_data(nm_content_dyadic(fmap, args.n, None, args.depth, threads=_threads(args)), args.out)
    elif args.what == "ladder":
        if args.point is None:
            raise MgtError("emit ladder needs --point")
        emit_plot_data(density_profile(fmap, args.point, args.n, _ladder(args)), args.out)
    else:
        emit_plot_data(density_field(fmap, args.stride, args.n, _ladder(args), threads=_threads(args)), args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML config (or JSON mirror)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker threads (MGT_THREADS overrides)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file (directory for verify)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    ladder = argparse.ArgumentParser(add_help=False)
    ladder.add_argument("--ladder-count", type=int, default=8)
    ladder.add_argument("--ladder-factor", type=float, default=0.5)
    ladder.add_argument("--ladder-top", type=float, default=None)
    ladder.add_argument("--radii", type=_floats, default=None, metavar="COUNT,FACTOR",
                        help="shorthand for --ladder-count and --ladder-factor")

    p = argparse.ArgumentParser(prog="mgt", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("content", parents=[common], help="Hausdorff content of a point set or map image")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--points", "--input", dest="points", help="CSV of coordinates (or whitespace-separated ids with --metric)")
    src.add_argument("--map", help="map manifest; uses every node image")
    src.add_argument("--metric", help="CSV distance matrix with an id header row")
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--method", default="auto", choices=["auto", "pixel", "oracle", "greedy"])
    s.add_argument("--rho", type=float, default=None)
    s.add_argument("--cell", type=float, default=None)
    s.set_defaults(func=cmd_content)

    s = sub.add_parser("density", parents=[common, ladder], help="density ladder at a point or over a field")
    s.add_argument("--map", required=True)
    s.add_argument("--point", type=_floats, default=None)
    s.add_argument("--stride", type=int, default=8)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--shape", choices=["ball", "cube"], default="ball")
    s.add_argument("--csv", help="also write tidy plot data here")
    s.set_defaults(func=cmd_density)

    s = sub.add_parser("jacobian", parents=[common], help="finite-difference derivative and n-Jacobian")
    s.add_argument("--map", required=True)
    s.add_argument("--point", "--at", dest="point", type=_floats, required=True)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--h-fd", type=float, default=None)
    s.set_defaults(func=cmd_jacobian)

    s = sub.add_parser("verify-prop52", parents=[common, ladder], help="density against |J f| over a field")
    s.add_argument("--map", required=True)
    s.add_argument("--stride", type=int, default=8)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--tol", type=float, default=0.05)
    s.add_argument("--fraction", type=float, default=0.95)
    s.set_defaults(func=cmd_verify_prop52)

    s = sub.add_parser("nm-content", parents=[common], help="dyadic (n, m)-content upper bound")
    s.add_argument("--map", required=True)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--m", type=int, default=None)
    s.add_argument("--depth", type=int, default=4)
    s.add_argument("--csv", help="also write per-cube plot data here")
    s.set_defaults(func=cmd_nm_content)

    s = sub.add_parser("verify-prop51", parents=[common, ladder], help="(n, m)-content against the density integral")
    s.add_argument("--map", required=True)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--m", type=int, default=None)
    s.add_argument("--depth", type=int, default=5)
    s.add_argument("--stride", type=int, default=8)
    s.add_argument("--factor", type=float, default=1.1)
    s.set_defaults(func=cmd_verify_prop51)

    s = sub.add_parser("chart", parents=[common], help="build a certified normal-form chart")
    s.add_argument("--map", required=True)
    s.add_argument("--center", type=_floats, required=True)
    s.add_argument("--n", type=int, default=None)
    s.set_defaults(func=cmd_chart)

    s = sub.add_parser("chart-verify", parents=[common], help="residuals and slice checks for a saved chart")
    s.add_argument("--chart", required=True)
    s.add_argument("--map", required=True)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--tau", type=float, default=None, help="K-hat threshold (default 10h)")
    s.add_argument("--tol-img", type=float, default=1e-6)
    s.set_defaults(func=cmd_chart_verify)

    s = sub.add_parser("gallery", parents=[common], help="list gallery maps or write a manifest")
    s.add_argument("--list", action="store_true")
    s.add_argument("--emit", metavar="NAME", choices=sorted(GALLERY))
    s.add_argument("--N", type=int, default=None, help="fold depth")
    s.add_argument("--grid", type=int, default=None)
    s.set_defaults(func=cmd_gallery)

    s = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    s.add_argument("--only", nargs="+", metavar="ID", help="run a subset of checks (e.g. AC02 AC08)")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("emit", parents=[common, ladder], help="tidy CSV for plotting")
    s.add_argument("what", choices=["density-field", "ladder", "partition"])
    s.add_argument("--map", required=True)
    s.add_argument("--point", type=_floats, default=None)
    s.add_argument("--stride", type=int, default=8)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--depth", type=int, default=4)
    s.set_defaults(func=cmd_emit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verb == "emit" and not getattr(args, "out", None):
        parser.error("emit needs --out")
    try:
        return args.func(args)
    except MgtError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
