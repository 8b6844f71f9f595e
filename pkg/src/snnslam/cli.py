"""Command line entry point: simulate, run, evaluate, plot.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from .config import MODES, ConfigError, load_config, load_yaml
from .evaluation import InsufficientDataError, Trajectory, evaluate
from .recording import RecordingError, read_recording, write_recording
from .scenario import Scenario, ScenarioError, generate_recording

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

log = logging.getLogger("snnslam")


class DataError(Exception):
    pass


def _load_scenario(path, seed, duration) -> Scenario:
    d = load_yaml(path) if path else {}
    if seed is not None:
        d["seed"] = seed
    if duration is not None:
        d["duration"] = duration
    try:
        return Scenario.from_dict(d)
    except TypeError as exc:
        raise ScenarioError(str(exc)) from None


def cmd_simulate(args) -> int:
    sc = _load_scenario(args.scenario, args.seed, args.duration)
    rec = generate_recording(sc)
    out = write_recording(rec, args.out)
    log.info("wrote %d DVS events, %d radar frames, %d gyro samples to %s",
             len(rec.dvs), len(rec.radar), len(rec.gyro), out)
    return EXIT_OK


def cmd_run(args) -> int:
    from .pipeline import run_pipeline

    cfg = load_config(args.config)
    rec = read_recording(args.recording)

    def progress(k, n):
        log.info("bin %d / %d", k, n)

    res = run_pipeline(rec, cfg, args.mode, args.out, progress if args.verbose else None)
    gt = Path(args.recording) / "gt.csv"
    if gt.exists():
        shutil.copyfile(gt, Path(args.out) / "gt.csv")
    m = res.metrics
    line = f"{m['n_codes']} codes, {m['n_experiences']} experiences, {m['n_loop_closures']} loop closures"
    if "slam" in m:
        line += f"; MAE_L slam {m['slam']['mae_l']:.3f} m, odometry {m['odometry']['mae_l']:.3f} m"
    print(line)
    return EXIT_OK


def _read_traj(path) -> Trajectory:
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None
    if arr.size == 0 or arr.shape[1] < 3:
        raise DataError(f"{path}: expected columns t,x,y[,...]")
    try:
        return Trajectory.from_array(arr)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def cmd_evaluate(args) -> int:
    gt, slam = _read_traj(args.gt), _read_traj(args.slam)
    slam_map = None
    if args.map:
        try:
            slam_map = np.loadtxt(args.map, delimiter=",", skiprows=1, ndmin=2)[:, :2]
        except (OSError, ValueError, IndexError) as exc:
            raise DataError(f"{args.map}: {exc}") from None
    result = evaluate(gt, slam, slam_map)
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plots import plot_run

    try:
        plot_run(args.in_dir, args.out, args.gt)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="snnslam", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic recording")
    p.add_argument("--scenario", help="YAML file of scenario fields (default: figure-eight hall)")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="override the scenario duration [s]")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="replay a recording through the SLAM pipeline")
    p.add_argument("--recording", required=True)
    p.add_argument("--mode", choices=MODES, default="fused")
    p.add_argument("--config", help="flat YAML of pipeline parameters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="align a trajectory to ground truth and report MAE")
    p.add_argument("--gt", required=True)
    p.add_argument("--slam", required=True)
    p.add_argument("--map", help="obstacle or map CSV for the mapping error (default: trajectory)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="render a run directory to SVG")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--gt", help="ground-truth CSV (default: <in>/gt.csv if present)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ScenarioError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RecordingError, InsufficientDataError, DataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
