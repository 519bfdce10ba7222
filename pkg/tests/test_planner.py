import dataclasses
import json
import math
import sys
import textwrap

import numpy as np
import pytest

from riskplan.bench import gen_dynamics, gen_map
from riskplan.errors import ConfigError
from riskplan.kinematics import Control, ControlLimits, State
from riskplan.planner import (VARIANTS, GeneratorConfig, PlannerConfig, plan,
                              replay_safety, trajectory_length)
from riskplan.timetree import goal_reached
from riskplan.world import Scenario, StaticMap


def empty_scenario(n=30, goal_radius=0.4, dt=0.5, obstacles=()):
    grid = StaticMap(np.zeros((n, n)), 0.1)
    span = n * 0.1
    return Scenario(grid=grid, obstacles=list(obstacles),
                    start=State(0.4, 0.4, math.pi / 4),
                    goal=(span - 0.4, span - 0.4), goal_radius=goal_radius, dt=dt)


def fast_config(**kw):
    base = dict(variant="NAMR", seed=7, timeout=120.0, cycle_budget=30)
    base.update(kw)
    return PlannerConfig(**base)


# -- config ---------------------------------------------------------------


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        PlannerConfig.from_dict({"variant": "NAMR", "bogus": 1})
    with pytest.raises(ConfigError):
        PlannerConfig.from_dict({"limits": {"v_max": 1.0, "nope": 2}})
    with pytest.raises(ConfigError):
        PlannerConfig.from_dict({"generator": {"mode": "warp"}})


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        PlannerConfig.from_dict({"variant": "XXX"})
    with pytest.raises(ConfigError):
        PlannerConfig.from_dict({"cycle_budget": 0})
    with pytest.raises(ConfigError):
        PlannerConfig.from_dict({"timeout": -1.0})


def test_config_file_round_trip(tmp_path):
    doc = {"variant": "MULTI", "seed": 3, "p_max": 0.2,
           "limits": {"v_max": 0.8, "branching": 6},
           "generator": {"mode": "oracle", "latency_cycles": 2}}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    cfg = PlannerConfig.from_file(p)
    assert cfg.variant == "MULTI"
    assert cfg.limits.v_max == 0.8
    assert cfg.generator.latency_cycles == 2


def test_resolve_fills_scenario_defaults():
    sc = empty_scenario(dt=0.25, goal_radius=0.3)
    rc = PlannerConfig().resolve(sc)
    assert rc.dt == 0.25
    assert rc.eps == 0.3
    assert rc.eps_guid == 0.3
    assert rc.delta == pytest.approx(2 * 10 * 0.1)
    assert rc.rho == pytest.approx(0.5)
    assert rc.step_len == pytest.approx(0.3)


# -- planning runs ----------------------------------------------------------


def test_plan_succeeds_on_empty_map_all_variants():
    for variant in VARIANTS:
        sc = empty_scenario()
        out = plan(sc, fast_config(variant=variant))
        assert out.success, variant
        assert goal_reached(out.trajectory.final_state(), sc)
        assert out.execution_time <= 120.0
        assert out.execution_time == pytest.approx(out.stats.cycles * 0.5)


def test_plan_deterministic_same_seed():
    a = plan(empty_scenario(), fast_config()).to_json()
    b = plan(empty_scenario(), fast_config()).to_json()
    assert a == b


def test_plan_differs_across_seeds():
    a = plan(empty_scenario(), fast_config(seed=1)).to_json()
    b = plan(empty_scenario(), fast_config(seed=2)).to_json()
    assert a != b


def test_walled_goal_times_out():
    grid_cells = np.zeros((30, 30))
    grid_cells[20:27, 20] = 1.0
    grid_cells[20, 20:27] = 1.0
    grid_cells[26, 20:27] = 1.0
    grid_cells[20:27, 26] = 1.0
    grid = StaticMap(grid_cells, 0.1)
    sc = Scenario(grid=grid, obstacles=[], start=State(0.4, 0.4, 0),
                  goal=(2.3, 2.3), goal_radius=0.2, dt=0.5)
    out = plan(sc, fast_config(timeout=20.0))
    assert not out.success
    assert out.execution_time == 20.0
    assert out.stats.cycles == 40


def test_variant_nesting_namr_reduces_to_risk():
    base = plan(empty_scenario(), fast_config(variant="RISK", seed=11))
    nested = plan(empty_scenario(),
                  fast_config(variant="NAMR", seed=11, features=("none", "off")))
    assert base.to_json() == nested.to_json()


def test_timestamps_advance_by_dt():
    out = plan(empty_scenario(dt=0.25), fast_config())
    ts = [p.t for p in out.trajectory.points]
    for a, b in zip(ts, ts[1:]):
        assert b - a == pytest.approx(0.25)


def test_trajectory_length_matches_controls():
    out = plan(empty_scenario(), fast_config())
    want = sum(abs(p.control.v) * 0.5 for p in out.trajectory.points[1:])
    assert trajectory_length(out.trajectory) == pytest.approx(want, abs=1e-9)


def test_budget_bounds_growth_per_cycle():
    sc = empty_scenario()
    out = plan(sc, fast_config(variant="RISK", cycle_budget=25))
    assert all(n <= 25 for n in out.stats.nodes_per_cycle)


def test_safety_replay_with_movers():
    grid, start, goal = gen_map("blocks", 60, seed=3)
    obstacles = gen_dynamics("linear-pingpong", (6.0, 6.0), 2, seed=12, duration=130.0,
                             speed_range=(0.15, 0.25),
                             keepout=[(start.x, start.y, 1.8), (goal[0], goal[1], 1.8)])
    sc = Scenario(grid=grid, obstacles=obstacles, start=start, goal=goal,
                  goal_radius=0.5, dt=0.5)
    cfg = fast_config(timeout=120.0, seed=5)
    out = plan(sc, cfg)
    assert out.success
    violations = replay_safety(sc, out, cfg.footprint_radius, cfg.sigma_risk, cfg.p_max)
    assert violations == []


def test_obstacle_crossing_prunes_and_rerolls():
    # one mover crossing the straight line start-goal; planner must prune the
    # blocked branch and still succeed
    ts = np.arange(0.0, 130.0, 0.5)
    xs = 1.5 + 1.2 * np.sin(2 * math.pi * ts / 24.0)
    ys = np.full_like(ts, 1.5)
    from riskplan.world import DynamicObstacle
    mover = DynamicObstacle("crosser", 0.25, ts, xs, ys)
    sc = empty_scenario(obstacles=[mover])
    out = plan(sc, fast_config(seed=3, timeout=120.0))
    assert out.success
    assert out.stats.risk_pruned > 0
    violations = replay_safety(sc, out, 0.2, 0.3, 0.1)
    assert violations == []


def test_region_updates_only_in_adaptive_variants():
    for variant, expected in (("RISK", 0), ("MULTI", 0), ("NMR", 1)):
        out = plan(empty_scenario(), fast_config(variant=variant))
        assert out.stats.region_version == expected
    out = plan(empty_scenario(), fast_config(variant="NAMR"))
    assert out.stats.region_version >= 1


def test_risk_variant_slower_than_namr_on_average():
    risk_times = []
    namr_times = []
    for seed in range(20):
        sc = empty_scenario()
        risk_times.append(plan(sc, fast_config(variant="RISK", seed=seed,
                                               cycle_budget=6)).execution_time)
        sc = empty_scenario()
        namr_times.append(plan(sc, fast_config(variant="NAMR", seed=seed,
                                               cycle_budget=6)).execution_time)
    assert np.mean(risk_times) >= np.mean(namr_times)


# -- external generator robustness -------------------------------------------


ECHO_SERVER = textwrap.dedent("""
    import base64, json, sys
    for line in sys.stdin:
        req = json.loads(line)
        cx, cy = req["start"]
        gx, gy = req["goal"]
        cells = []
        # a fat diagonal band between start and goal
        for x in range(min(cx, gx), max(cx, gx) + 1):
            for y in range(min(cy, gy), max(cy, gy) + 1):
                if abs((x - cx) - (y - cy)) <= 6:
                    cells.append([x, y])
        print(json.dumps({"id": req["id"], "cells": cells}), flush=True)
""")

GARBLED_SERVER = textwrap.dedent("""
    import sys
    sys.stdin.readline()
    print("{totally not json", flush=True)
    for line in sys.stdin:
        print("{\\"id\\": -1, \\"cells\\": 7}", flush=True)
""")


def _write_server(tmp_path, code, name):
    p = tmp_path / name
    p.write_text(code)
    return [sys.executable, str(p)]


def test_plan_with_subprocess_generator(tmp_path):
    cmd = _write_server(tmp_path, ECHO_SERVER, "server.py")
    cfg = fast_config(generator=GeneratorConfig(mode="subprocess", command=tuple(cmd)))
    out = plan(empty_scenario(), cfg)
    assert out.success
    assert not out.stats.generator_fallback


def test_plan_garbled_generator_falls_back(tmp_path):
    cmd = _write_server(tmp_path, GARBLED_SERVER, "bad_server.py")
    cfg = fast_config(generator=GeneratorConfig(mode="subprocess", command=tuple(cmd),
                                                response_timeout_s=2.0))
    out = plan(empty_scenario(), cfg)
    assert out.success  # oracle fallback engaged, run completes
    assert out.stats.generator_fallback


def test_plan_dead_generator_falls_back():
    cfg = fast_config(generator=GeneratorConfig(
        mode="subprocess", command=(sys.executable, "-c", "pass"),
        response_timeout_s=1.0))
    out = plan(empty_scenario(), cfg)
    assert out.success
    assert out.stats.generator_fallback


def test_dump_trees(tmp_path):
    out_dir = tmp_path / "dump"
    plan(empty_scenario(), fast_config(variant="NAMR"), dump_dir=out_dir)
    root = (out_dir / "roottree.csv").read_text().splitlines()
    assert root[0] == "id,parent,x,y,theta,t,N,risk"
    assert len(root) > 1
    subs = list(out_dir.glob("subtree_*.csv"))
    assert subs
    head = subs[0].read_text().splitlines()[0]
    assert head == "id,parent,x,y,theta"
