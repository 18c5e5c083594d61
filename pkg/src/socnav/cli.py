"""Command-line entry point.

Subcommands:
  run           execute a benchmark config and write metrics/manifest/traces
  generate-map  run a map generator and write grid, distance map, descriptor
  replay        recompute metrics from a recorded trace file
  plot-data     aggregate metrics CSVs into plot-ready columnar tables

The default output root comes from $SOCNAV_OUT (falling back to ./socnav_out);
--out overrides it per invocation.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .errors import ConfigError, PlacementExhausted, SocnavError, TraceCorrupt


def _out_root(args):
    if args.out:
        return args.out
    return os.environ.get("SOCNAV_OUT", "socnav_out")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="socnav",
        description="Deterministic social-navigation simulation benchmark")
    parser.add_argument("--version", action="version",
                        version=f"socnav {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a benchmark config")
    run.add_argument("--config", required=True, help="benchmark YAML")
    run.add_argument("--planner", default="neutral",
                     help="intermediate planner: neutral|aggressive|polite|sideways")
    run.add_argument("--robot", default="jackal",
                     help="robot name (jackal|omni|cart) or a YAML path")
    run.add_argument("--seed", type=int, default=None,
                     help="fills missing stage seed bases deterministically")
    run.add_argument("--jobs", type=int, default=1,
                     help="parallel episode workers")
    run.add_argument("--record", action="store_true",
                     help="write per-episode binary traces")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--quiet", action="store_true")

    gen = sub.add_parser("generate-map", help="run one map generator")
    gen.add_argument("--algorithm", required=True)
    gen.add_argument("--size", default="120x120", help="WxH in cells")
    gen.add_argument("--resolution", type=float, default=0.25)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--seed-count", type=int, default=1,
                     help="generate this many consecutive seeds")
    gen.add_argument("--param", action="append", default=[],
                     metavar="KEY=VALUE", help="generator parameter override")
    gen.add_argument("--out", default=None, help="output directory")

    rep = sub.add_parser("replay", help="recompute metrics from a trace")
    rep.add_argument("trace", help="trace file path")
    rep.add_argument("--face-angle", type=float, default=None,
                     help="override facing-cone half angle, degrees")
    rep.add_argument("--face-range", type=float, default=None,
                     help="override facing-cone range, meters")
    rep.add_argument("--out", default=None)

    plot = sub.add_parser("plot-data", help="aggregate metrics CSVs")
    plot.add_argument("csvs", nargs="+", help="metrics CSV files")
    plot.add_argument("--out", default=None, help="output directory")
    return parser


def cmd_run(args) -> int:
    from .configio import load_benchmark
    from .tasks import run_benchmark

    try:
        config = load_benchmark(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = _out_root(args)
    log = (lambda msg: None) if args.quiet else \
        (lambda msg: print(msg, flush=True))
    rows, manifest = run_benchmark(
        config, args.planner, args.robot, out_dir,
        base_dir=os.path.dirname(os.path.abspath(args.config)),
        jobs=args.jobs, record=args.record, seed_override=args.seed, log=log)
    failures = sum(1 for _, _, rec in rows if rec is None)
    if failures:
        print(f"{failures} episode(s) failed; see the error column",
              file=sys.stderr)
    print(f"wrote {len(rows)} episode rows to {out_dir} "
          f"(config {manifest['config_hash'][:12]})")
    return 0 if manifest["complete"] or failures < len(rows) else 1


def _parse_params(pairs):
    params = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--param expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    return params


def cmd_generate_map(args) -> int:
    import yaml

    from .mapgen import distance_transform, export_world, generate_map, save_map

    try:
        width, height = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        print(f"bad --size {args.size!r}; expected WxH", file=sys.stderr)
        return 2
    out_dir = _out_root(args)
    os.makedirs(out_dir, exist_ok=True)
    params = _parse_params(args.param)
    for k in range(args.seed_count):
        seed = args.seed + k
        try:
            grid = generate_map(args.algorithm, params, (width, height),
                                seed, args.resolution)
        except (PlacementExhausted, ValueError) as exc:
            print(f"generation failed: {exc}", file=sys.stderr)
            return 1
        stem = os.path.join(out_dir, f"{args.algorithm}_{seed}")
        save_map(grid, stem + ".pgm")
        np.save(stem + ".dist.npy", grid.distance_map().distances)
        with open(stem + ".world.yaml", "w") as fh:
            yaml.safe_dump(export_world(grid).to_dict(), fh, sort_keys=True)
        print(f"{stem}.pgm ({grid.width}x{grid.height} cells, "
              f"digest {grid.digest()[:12]})")
    return 0


def cmd_replay(args) -> int:
    from .metrics import METRIC_FIELDS, MetricParams, compute_episode_metrics
    from .recording import read_trace
    from .tasks import format_cell

    try:
        trace = read_trace(args.trace)
    except TraceCorrupt as exc:
        print(f"trace corrupt: {exc}", file=sys.stderr)
        return 1
    goal = trace.meta.get("goal")
    if goal is None:
        print("trace has no goal metadata", file=sys.stderr)
        return 1
    kwargs = {}
    if args.face_angle is not None:
        kwargs["face_half_angle"] = math.radians(args.face_angle)
    if args.face_range is not None:
        kwargs["face_range"] = args.face_range
    params = MetricParams(**kwargs)
    record = compute_episode_metrics(trace, goal, params)
    header = ",".join(METRIC_FIELDS)
    row = ",".join(format_cell(getattr(record, name))
                   for name in METRIC_FIELDS)
    print(header)
    print(row)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(header + "\n" + row + "\n")
    return 0


def _read_metrics_csv(path):
    from .metrics import METRIC_FIELDS, MetricsRecord

    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        idx = {name: header.index(name) for name in header}
        for line in fh:
            cells = line.rstrip("\n").split(",")
            if cells[idx["error"]]:
                continue
            kwargs = {}
            for name in METRIC_FIELDS:
                raw = cells[idx[name]]
                if raw == "":
                    kwargs[name] = None
                elif raw in ("true", "false"):
                    kwargs[name] = raw == "true"
                elif name == "collisions":
                    kwargs[name] = int(raw)
                else:
                    kwargs[name] = float(raw)
            rows.append(((cells[idx["planner"]], cells[idx["stage"]]),
                         MetricsRecord(**kwargs)))
    return rows


def cmd_plot_data(args) -> int:
    from .metrics import NUMERIC_FIELDS, aggregate

    out_dir = _out_root(args)
    os.makedirs(out_dir, exist_ok=True)
    items = []
    for path in args.csvs:
        items.extend(_read_metrics_csv(path))
    if not items:
        print("no successful episodes found", file=sys.stderr)
        return 1
    grouped = aggregate(items, lambda key, rec: key)
    written = []
    for metric in NUMERIC_FIELDS + ["success_rate", "timeout_rate"]:
        path = os.path.join(out_dir, f"plot_{metric}.txt")
        with open(path, "w") as fh:
            fh.write("planner stage mean std\n")
            for (planner, stage) in sorted(grouped):
                stats = grouped[(planner, stage)]
                value = stats.get(metric)
                if value is None:
                    continue
                if isinstance(value, dict):
                    fh.write(f"{planner} {stage} "
                             f"{format_float(value['mean'])} "
                             f"{format_float(value['std'])}\n")
                else:
                    fh.write(f"{planner} {stage} {format_float(value)} 0.0\n")
        written.append(path)
    print(f"wrote {len(written)} aggregate tables to {out_dir}")
    return 0


def format_float(x):
    return repr(float(x))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "generate-map":
            return cmd_generate_map(args)
        if args.command == "replay":
            return cmd_replay(args)
        if args.command == "plot-data":
            return cmd_plot_data(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SocnavError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
