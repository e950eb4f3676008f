"""Command line: ``wandcal {simulate,detect,calibrate,evaluate}``.

Exit codes: 0 success, 2 bad configuration, 3 detection failure,
4 disconnected camera graph, 5 solver failure, 6 evaluation failure.
Set ``EWAND_LOG`` (e.g. ``INFO`` or ``DEBUG``) for progress messages.
"""
from __future__ import annotations

import argparse
import sys

from . import pipeline
from .pipeline import EXIT_CONFIG, CalibrateOptions, StageError
from .simulator import Scenario


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wandcal", description="Wand-based extrinsic calibration of mixed frame/event camera rigs.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    s.add_argument("config", nargs="?", help="scenario JSON (defaults apply when omitted)")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--seed", type=int, help="override the scenario seed")
    s.add_argument("--duration", type=float, help="override the scenario duration in seconds")
    s.add_argument("--noiseless", action="store_true", help="disable all sensor noise")

    d = sub.add_parser("detect", help="extract wand observations from a dataset")
    d.add_argument("dataset", help="dataset directory (with manifest.json)")
    d.add_argument("--out", required=True, help="observation CSV to write")

    c = sub.add_parser("calibrate", help="estimate camera extrinsics from wand observations")
    c.add_argument("observations", help="observation CSV (camera,t_s,marker,u,v)")
    c.add_argument("--intrinsics", required=True)
    c.add_argument("--wand", required=True)
    c.add_argument("--out", required=True, help="result JSON to write")
    c.add_argument("--seed", type=int, default=0, help="master seed (RANSAC seed unless given)")
    c.add_argument("--ransac-threshold", type=float, default=CalibrateOptions.ransac_threshold)
    c.add_argument("--ransac-seed", type=int)
    c.add_argument("--min-inliers", type=int, default=CalibrateOptions.min_inliers)
    c.add_argument("--refine-intrinsics", action="store_true")
    c.add_argument("--robust-loss", choices=("none", "huber"), default="none")
    c.add_argument("--lambda-lin", type=float, default=CalibrateOptions.lambda_lin)
    c.add_argument("--lambda-dist", type=float, default=CalibrateOptions.lambda_dist)
    c.add_argument("--max-iters", type=int, default=CalibrateOptions.max_iters)

    e = sub.add_parser("evaluate", help="reprojection and 3D error against a reference trajectory")
    e.add_argument("calibration", help="result JSON from calibrate")
    e.add_argument("observations")
    e.add_argument("--intrinsics", required=True)
    e.add_argument("--trajectory", required=True, help="reference CSV (t_s,x_m,y_m,z_m)")
    e.add_argument("--marker", type=int, default=pipeline.EVAL_MARKER, choices=(0, 1, 2))
    e.add_argument("--out", required=True)
    return p


def _scenario(args) -> Scenario:
    if args.config:
        try:
            sc = Scenario.from_dict(pipeline.load_json_config(args.config))
        except ValueError as exc:
            raise StageError(EXIT_CONFIG, f"{args.config}: {exc}")
    else:
        sc = Scenario()
    if args.noiseless:
        sc = Scenario(**{**sc.__dict__, "intensity_sigma": 0.0, "event_jitter_s": 0.0, "event_noise_rate": 0.0})
    if args.seed is not None:
        sc.seed = args.seed
    if args.duration is not None:
        if args.duration < 0:
            raise StageError(EXIT_CONFIG, "--duration must be non-negative")
        sc.duration_s = args.duration
    return sc


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    pipeline.configure_logging()
    if args.command == "simulate":
        return pipeline.cmd_simulate(_scenario(args), args.out)
    if args.command == "detect":
        return pipeline.cmd_detect(args.dataset, args.out)
    if args.command == "calibrate":
        opts = CalibrateOptions(
            ransac_threshold=args.ransac_threshold,
            ransac_seed=args.seed if args.ransac_seed is None else args.ransac_seed,
            min_inliers=args.min_inliers, refine_intrinsics=args.refine_intrinsics,
            robust_loss=args.robust_loss, lambda_lin=args.lambda_lin, lambda_dist=args.lambda_dist,
            max_iters=args.max_iters)
        return pipeline.cmd_calibrate(args.observations, args.intrinsics, args.wand, args.out, opts)
    return pipeline.cmd_evaluate(args.calibration, args.observations, args.intrinsics,
                                 args.trajectory, args.out, args.marker)


def main(argv=None) -> int:
    try:
        code = run(argv)
    except StageError as exc:
        print(f"wandcal: error: {exc}", file=sys.stderr)
        code = exc.code
    sys.exit(code)


if __name__ == "__main__":
    main()
