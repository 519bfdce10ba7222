"""Command line front end: single plan runs, benchmark suites, map generation."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .bench import BenchSuite, gen_map, run_suite
from .planner import PlannerConfig, plan
from .world import load_scenario, save_map


def _cmd_plan(args) -> int:
    scenario = load_scenario(args.scenario)
    config = PlannerConfig.from_file(args.config) if args.config else PlannerConfig()
    overrides = {}
    if args.variant:
        overrides["variant"] = args.variant
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = dataclasses.replace(config, **overrides)
        config.validate()
    outcome = plan(scenario, config, dump_dir=args.dump_trees)
    text = outcome.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    print(f"variant={config.variant} seed={config.seed} success={outcome.success} "
          f"exec_time={outcome.execution_time:.2f}s "
          f"length={outcome.trajectory.total_length:.2f}m", file=sys.stderr)
    return 0


def _cmd_bench(args) -> int:
    suite = BenchSuite.from_file(args.suite)
    overrides = {}
    if args.runs is not None:
        overrides["runs"] = args.runs
    if args.timeout is not None:
        overrides["timeout"] = args.timeout
    if overrides:
        suite = dataclasses.replace(suite, **overrides)
    report = run_suite(suite, parallelism=args.parallel, out_dir=args.out)
    for key in sorted(report.cells):
        cell = report.cells[key]
        print(f"{key}: success {cell['successes']}/{cell['runs']} "
              f"exec_time_mean={cell['exec_time_mean']} traj_len_mean={cell['traj_len_mean']}")
    return 0


def _cmd_genmap(args) -> int:
    grid, start, goal = gen_map(args.family, args.size, args.seed, resolution=args.resolution)
    save_map(args.out, grid)
    print(json.dumps({"map": str(args.out),
                      "start": [start.x, start.y, start.theta],
                      "goal": [goal[0], goal[1]]}))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="riskplan",
                                     description="risk-aware tree planning in dynamic environments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="run one planning episode on a scenario")
    p.add_argument("--scenario", required=True, help="scenario descriptor (JSON)")
    p.add_argument("--variant", choices=["RISK", "BI", "MULTI", "NMR", "NAMR"])
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="planner config file (JSON)")
    p.add_argument("--dump-trees", help="directory for tree CSV dumps")
    p.add_argument("--out", help="outcome JSON path (default: stdout)")
    p.set_defaults(func=_cmd_plan)

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("--suite", required=True, help="suite file (JSON)")
    b.add_argument("--runs", type=int, help="override runs per cell")
    b.add_argument("--timeout", type=float, help="override simulated timeout (s)")
    b.add_argument("--parallel", type=int, default=1, help="worker processes")
    b.add_argument("--out", required=True, help="output directory (runs.csv, summary.json)")
    b.set_defaults(func=_cmd_bench)

    g = sub.add_parser("genmap", help="generate a benchmark map file")
    g.add_argument("--family", required=True, choices=["blocks", "discs", "mixed"])
    g.add_argument("--size", required=True, type=int, help="map size in cells")
    g.add_argument("--seed", required=True, type=int)
    g.add_argument("--resolution", type=float, default=0.1, help="meters per cell")
    g.add_argument("--out", required=True, help="map file path")
    g.set_defaults(func=_cmd_genmap)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
