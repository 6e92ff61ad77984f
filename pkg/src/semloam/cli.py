"""Command line entry point: ``semloam run | synth | eval | config``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PipelineConfig
from .dataset import DatasetError, read_trajectory
from .evaluation import evaluate
from .pipeline import EXIT_DATA, EXIT_OK, run
from .synth import SceneSpec, single_pole_spec, square_loop_spec, straight_line_spec, synth_dataset

log = logging.getLogger("semloam")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semloam", description="Semantic LiDAR odometry with loop closure.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="process a sequence directory")
    p.add_argument("dataset", nargs="?", help="directory with velodyne/ and labels/")
    p.add_argument("-o", "--output", help="output directory")
    p.add_argument("-c", "--config", help="config file (section.field = value)")
    p.add_argument("--no-loop", action="store_true", help="disable loop closure")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--eval", dest="gt", metavar="GT", help="ground-truth pose file to evaluate against")
    p.add_argument("--max-scans", type=int, help="process only the first N scans")

    p = sub.add_parser("synth", help="write a synthetic labelled sequence")
    p.add_argument("output", help="output directory")
    p.add_argument("--scene", choices=("square", "line", "pole"), default="square")
    p.add_argument("--spec", help="scene JSON (overrides --scene)")
    p.add_argument("--scans", type=int, default=200)
    p.add_argument("--spacing", type=float, default=2.0, help="metres between scans")
    p.add_argument("--side", type=float, help="square side or line length in metres")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="compare a trajectory file with ground truth")
    p.add_argument("estimate")
    p.add_argument("ground_truth")

    p = sub.add_parser("config", help="print the default configuration")
    p.add_argument("-c", "--config", help="config file to normalise instead of the defaults")
    return parser


def _run(args) -> int:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    run_over, loop_over = {}, {}
    if args.dataset:
        run_over["dataset"] = args.dataset
    if args.output:
        run_over["output"] = args.output
    if args.no_loop:
        run_over["loop_closure"] = False
    if args.gt:
        run_over["ground_truth"] = args.gt
    if args.seed is not None:
        loop_over["rng_seed"] = args.seed
    cfg = cfg.with_overrides(run=run_over, loop=loop_over)
    result = run(cfg, max_scans=args.max_scans)
    log.info("%d scans, %d loop edges, %d skipped", len(result.trajectory), len(result.loops), len(result.skipped))
    if result.report is not None:
        sys.stderr.write(result.odometry_report.to_text("odometry") + result.report.to_text("loop-corrected"))
    return result.exit_code


def _synth(args) -> int:
    if args.spec:
        spec = SceneSpec.from_dict(json.loads(Path(args.spec).read_text()))
    elif args.scene == "square":
        spec = square_loop_spec(side=args.side or 80.0, n_scans=args.scans, scan_spacing=args.spacing, seed=args.seed)
    elif args.scene == "line":
        length = args.side or args.spacing * args.scans
        spec = straight_line_spec(length=length, n_scans=args.scans, scan_spacing=args.spacing, seed=args.seed)
    else:
        spec = single_pole_spec()
    out = synth_dataset(spec, args.output, seed=args.seed)
    log.info("wrote %d scans to %s", spec.n_scans, out)
    return EXIT_OK


def _eval(args) -> int:
    est, gt = read_trajectory(args.estimate), read_trajectory(args.ground_truth)
    if len(est) != len(gt):
        raise DatasetError(f"{len(est)} estimated poses vs {len(gt)} ground-truth poses")
    sys.stdout.write(evaluate(est, gt).to_text(Path(args.estimate).name))
    return EXIT_OK


def _config(args) -> int:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    sys.stdout.write(cfg.dumps())
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose + 1, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _run, "synth": _synth, "eval": _eval, "config": _config}
    try:
        return handlers[args.command](args)
    except (ValueError, KeyError, OSError) as exc:  # config and data errors, incl. DatasetError / ConfigError
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
