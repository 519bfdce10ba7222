"""Benchmark harness: deterministic map families, synthetic mover profiles,
batch suite execution across planner variants, and machine-readable reports."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, GenerationFailure, ParseError
from .kinematics import State
from .planner import PlannerConfig, PlanOutcome, plan
from .world import (DynamicObstacle, Scenario, StaticMap, load_scenario,
                    load_trajectories, static_collision_prob)

MAP_FAMILIES = ("blocks", "discs", "mixed")
RUNS_CSV_COLUMNS = ["scenario", "variant", "seed", "success", "exec_time_s",
                    "traj_len_m", "cycles", "nodes", "region_updates"]


# ---------------------------------------------------------------------------
# Map generation


def _place_endpoint(grid: StaticMap, corner: tuple[int, int], clearance_m: float):
    """Free point near a corner with disc clearance, scanning inward along the
    diagonal and then sideways."""
    res = grid.resolution
    sx, sy = corner
    dirx = 1 if sx == 0 else -1
    diry = 1 if sy == 0 else -1
    base_x = 0 if sx == 0 else grid.width - 1
    base_y = 0 if sy == 0 else grid.height - 1
    for k in range(2, max(grid.width, grid.height) // 2):
        for off in range(0, k + 1):
            for cx, cy in ((base_x + dirx * k, base_y + diry * off),
                           (base_x + dirx * off, base_y + diry * k)):
                if not grid.in_bounds_cell(cx, cy):
                    continue
                x, y = grid.cell_center(cx, cy)
                if static_collision_prob(grid, (x, y), clearance_m) == 0.0:
                    return x, y
    raise GenerationFailure(f"no free endpoint near corner {corner}")


def gen_map(family: str, size_cells: int, seed: int, resolution: float = 0.1,
            block_cells: int | None = None, gap_cells: int | None = None,
            margin_cells: int | None = None, disc_count: int | None = None,
            disc_radius_cells: tuple[int, int] | None = None,
            endpoint_clearance_m: float = 0.35):
    """Deterministic benchmark map. Returns (grid, start_state, goal_xy) with
    start and goal in opposite free corners.

    blocks: a regular lattice of square blocks with free aisles.
    discs:  rejection-sampled non-overlapping discs, corners kept clear.
    mixed:  a sparser block lattice plus discs in the aisles.
    """
    if family not in MAP_FAMILIES:
        raise ConfigError(f"unknown map family {family!r}")
    if size_cells < 20:
        raise ConfigError("size_cells must be >= 20")
    rng = np.random.default_rng(seed)
    occ = np.zeros((size_cells, size_cells), dtype=np.float64)
    if family in ("blocks", "mixed"):
        base = max(4, round(size_cells * 0.12))
        block = block_cells if block_cells is not None else int(rng.integers(base - 2, base + 3))
        # aisles stay at least 8 cells wide so a footprint disc can pass
        base_gap = max(8, round(size_cells * (0.11 if family == "blocks" else 0.15)))
        gap = gap_cells if gap_cells is not None else int(rng.integers(base_gap, base_gap + 4))
        margin = margin_cells if margin_cells is not None else max(8, size_cells // 12)
        pitch = block + gap
        phase = int(rng.integers(0, max(1, gap // 2)))
        for by in range(margin + phase, size_cells - margin - block + 1, pitch):
            for bx in range(margin + phase, size_cells - margin - block + 1, pitch):
                occ[by:by + block, bx:bx + block] = 1.0
    if family in ("discs", "mixed"):
        count = disc_count if disc_count is not None else max(5, size_cells * size_cells // 1200)
        if family == "mixed":
            count = max(3, count // 2)
        r_lo, r_hi = disc_radius_cells if disc_radius_cells is not None else (
            max(2, size_cells // 25), max(3, size_cells // 14))
        keep = max(10, size_cells // 6)
        corners = [(0, 0), (size_cells, 0), (0, size_cells), (size_cells, size_cells)]
        placed = []
        attempts = 0
        while len(placed) < count and attempts < count * 300:
            attempts += 1
            r = int(rng.integers(r_lo, r_hi + 1))
            cx = float(rng.uniform(r + 2, size_cells - r - 2))
            cy = float(rng.uniform(r + 2, size_cells - r - 2))
            if any(math.hypot(cx - kx, cy - ky) < r + keep for kx, ky in corners):
                continue
            if any(math.hypot(cx - px, cy - py) < r + pr + 2 for px, py, pr in placed):
                continue
            gx, gy = np.meshgrid(np.arange(size_cells) + 0.5, np.arange(size_cells) + 0.5)
            d2 = (gx - cx) ** 2 + (gy - cy) ** 2
            inside = d2 <= r * r
            # keep a free ring around every disc so aisles stay passable
            if family == "mixed" and (occ[d2 <= (r + 6) ** 2] > 0).any():
                continue
            occ[inside] = 1.0
            placed.append((cx, cy, r))
    grid = StaticMap(occ, resolution)
    start_xy = _place_endpoint(grid, (0, 0), endpoint_clearance_m)
    goal_xy = _place_endpoint(grid, (grid.width - 1, grid.height - 1), endpoint_clearance_m)
    theta = math.atan2(goal_xy[1] - start_xy[1], goal_xy[0] - start_xy[0])
    return grid, State(start_xy[0], start_xy[1], theta), goal_xy


# ---------------------------------------------------------------------------
# Dynamic obstacle generation


def _pingpong_positions(e0, e1, period, phase, ts):
    tau = np.mod(ts + phase, period)
    s = np.where(tau < period / 2.0, 2.0 * tau / period, 2.0 - 2.0 * tau / period)
    return e0[0] + s * (e1[0] - e0[0]), e0[1] + s * (e1[1] - e0[1])


def _seg_point_dist(a, b, p) -> float:
    ax, ay = a
    bx, by = b
    px, py = p
    vx, vy = bx - ax, by - ay
    L2 = vx * vx + vy * vy
    if L2 == 0:
        return math.hypot(px - ax, py - ay)
    t = min(1.0, max(0.0, ((px - ax) * vx + (py - ay) * vy) / L2))
    return math.hypot(px - (ax + t * vx), py - (ay + t * vy))


def gen_dynamics(profile: str, map_bounds: tuple[float, float], count: int, seed: int,
                 dt: float = 0.5, duration: float = 300.0,
                 speed_range: tuple[float, float] = (0.2, 0.35),
                 obstacle_radius: float = 0.3, keepout=(),
                 leg_range: tuple[float, float] = (0.25, 0.9)) -> list[DynamicObstacle]:
    """Synthetic movers sampled on the dt grid over [0, duration], or CSV
    playback via the profile string "csv:<path>".

    linear-pingpong: constant speed back and forth between two endpoints whose
    separation is drawn from leg_range (as a fraction of the smaller map side).
    circular: constant angular speed around a fixed center.
    Trajectories are rejected while they enter any keepout disc (x, y, r).
    """
    if profile.startswith("csv:"):
        return load_trajectories(profile[4:])
    if profile not in ("linear-pingpong", "circular"):
        raise ConfigError(f"unknown dynamics profile {profile!r}")
    if count == 0:
        return []
    rng = np.random.default_rng(seed)
    width, height = map_bounds
    lo = (0.18 * width, 0.18 * height)
    hi = (0.82 * width, 0.82 * height)
    ts = np.arange(0.0, duration + dt / 2.0, dt)
    out = []
    for k in range(count):
        for _ in range(400):
            speed = float(rng.uniform(*speed_range))
            if profile == "linear-pingpong":
                e0 = (float(rng.uniform(lo[0], hi[0])), float(rng.uniform(lo[1], hi[1])))
                e1 = (float(rng.uniform(lo[0], hi[0])), float(rng.uniform(lo[1], hi[1])))
                length = math.hypot(e1[0] - e0[0], e1[1] - e0[1])
                if not (leg_range[0] * min(width, height) <= length
                        <= leg_range[1] * min(width, height)):
                    continue
                if any(_seg_point_dist(e0, e1, (kx, ky)) < kr for kx, ky, kr in keepout):
                    continue
                period = 2.0 * length / speed
                phase = float(rng.uniform(0.0, period))
                xs, ys = _pingpong_positions(e0, e1, period, phase, ts)
            else:
                radius = float(rng.uniform(0.08, 0.2)) * min(width, height)
                cx = float(rng.uniform(lo[0] + radius, hi[0] - radius))
                cy = float(rng.uniform(lo[1] + radius, hi[1] - radius))
                if any(abs(math.hypot(cx - kx, cy - ky) - radius) < kr for kx, ky, kr in keepout):
                    continue
                omega = speed / radius * (1.0 if rng.random() < 0.5 else -1.0)
                phase = float(rng.uniform(0.0, 2.0 * math.pi))
                xs = cx + radius * np.cos(phase + omega * ts)
                ys = cy + radius * np.sin(phase + omega * ts)
            out.append(DynamicObstacle(obstacle_id=f"m{k}", radius=obstacle_radius,
                                       times=ts.copy(), xs=xs, ys=ys))
            break
        else:
            raise GenerationFailure(f"could not place mover {k} outside keepout zones")
    return out


# ---------------------------------------------------------------------------
# Suites


_SPEC_KEYS = {"name", "scenario_path", "family", "size", "map_seed", "resolution",
              "map_params", "dynamics", "movers", "dynamics_seed", "speed_range",
              "obstacle_radius", "dt", "goal_radius", "horizon_depth", "endpoint_keepout_m"}


@dataclass(frozen=True)
class ScenarioSpec:
    """One suite scenario: either a scenario file on disk or a generated
    (map family, dynamics profile) pair."""

    name: str
    scenario_path: str | None = None
    family: str = "blocks"
    size: int = 100
    map_seed: int = 0
    resolution: float = 0.1
    map_params: tuple = ()
    dynamics: str = "linear-pingpong"
    movers: int = 0
    dynamics_seed: int = 0
    speed_range: tuple = (0.2, 0.35)
    obstacle_radius: float = 0.3
    dt: float = 0.5
    goal_radius: float = 0.5
    horizon_depth: int = 10
    endpoint_keepout_m: float = 1.5

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path) -> "ScenarioSpec":
        unknown = set(d) - _SPEC_KEYS
        if unknown:
            raise ConfigError(f"scenario spec {d.get('name')!r}: unknown keys {sorted(unknown)}")
        d = dict(d)
        if "map_params" in d:
            d["map_params"] = tuple(sorted(d["map_params"].items()))
        if "speed_range" in d:
            d["speed_range"] = tuple(d["speed_range"])
        if d.get("scenario_path"):
            p = (base_dir / d["scenario_path"]).resolve()
            if not p.exists():
                raise ConfigError(f"scenario file does not exist: {p}")
            d["scenario_path"] = str(p)
        return cls(**d)

    def build(self, timeout: float) -> Scenario:
        if self.scenario_path:
            return load_scenario(self.scenario_path)
        grid, start, goal = gen_map(self.family, self.size, self.map_seed,
                                    self.resolution, **dict(self.map_params))
        keepout = [(start.x, start.y, self.endpoint_keepout_m + self.obstacle_radius),
                   (goal[0], goal[1], self.endpoint_keepout_m + self.obstacle_radius)]
        obstacles = gen_dynamics(self.dynamics, (grid.world_width, grid.world_height),
                                 self.movers, self.dynamics_seed, dt=self.dt,
                                 duration=timeout + 10.0 * self.dt,
                                 speed_range=self.speed_range,
                                 obstacle_radius=self.obstacle_radius, keepout=keepout)
        return Scenario(grid=grid, obstacles=obstacles, start=start, goal=goal,
                        goal_radius=self.goal_radius, dt=self.dt,
                        horizon_depth=self.horizon_depth)


@dataclass(frozen=True)
class BenchSuite:
    scenarios: tuple
    variants: tuple = ("RISK", "BI", "MULTI", "NMR", "NAMR")
    runs: int = 50
    timeout: float = 240.0
    base_seed: int = 1000
    config: PlannerConfig = field(default_factory=PlannerConfig)

    @classmethod
    def from_file(cls, path) -> "BenchSuite":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read suite {path}: {exc}") from exc
        unknown = set(raw) - {"scenarios", "variants", "runs", "timeout", "base_seed", "config"}
        if unknown:
            raise ConfigError(f"{path}: unknown suite keys {sorted(unknown)}")
        if "scenarios" not in raw or not raw["scenarios"]:
            raise ConfigError(f"{path}: suite needs at least one scenario")
        scenarios = tuple(ScenarioSpec.from_dict(s, path.parent) for s in raw["scenarios"])
        cfg = PlannerConfig.from_dict(raw.get("config", {}))
        suite = cls(scenarios=scenarios,
                    variants=tuple(raw.get("variants", cls.variants)),
                    runs=int(raw.get("runs", cls.runs)),
                    timeout=float(raw.get("timeout", cls.timeout)),
                    base_seed=int(raw.get("base_seed", cls.base_seed)),
                    config=cfg)
        if suite.runs < 1:
            raise ConfigError("suite runs must be >= 1")
        return suite


def execute_run(spec: ScenarioSpec, variant: str, seed: int, config: PlannerConfig,
                timeout: float) -> dict:
    """One benchmark cell run; failures of any kind become unsuccessful rows."""
    row = {"scenario": spec.name, "variant": variant, "seed": seed, "success": False,
           "exec_time_s": timeout, "traj_len_m": 0.0, "cycles": 0, "nodes": 0,
           "region_updates": 0, "reason": ""}
    try:
        scenario = spec.build(timeout)
        cfg = dataclasses.replace(config, variant=variant, seed=seed, timeout=timeout)
        outcome = plan(scenario, cfg)
        row.update(success=outcome.success,
                   exec_time_s=outcome.execution_time,
                   traj_len_m=outcome.trajectory.total_length,
                   cycles=outcome.stats.cycles,
                   nodes=outcome.stats.nodes_added,
                   region_updates=outcome.stats.region_version,
                   reason="" if outcome.success else "timeout")
    except Exception as exc:  # a failed run is a row, not a crash
        row["reason"] = f"{type(exc).__name__}: {exc}"
    return row


def _execute_cell(args):
    return execute_run(*args)


@dataclass
class BenchReport:
    rows: list
    cells: dict
    note: str

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "runs.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RUNS_CSV_COLUMNS)
            for row in self.rows:
                writer.writerow([row["scenario"], row["variant"], row["seed"],
                                 int(row["success"]), repr(float(row["exec_time_s"])),
                                 repr(float(row["traj_len_m"])), row["cycles"],
                                 row["nodes"], row["region_updates"]])
        (out_dir / "summary.json").write_text(json.dumps(
            {"cells": self.cells, "note": self.note}, indent=1, sort_keys=True) + "\n")


def _aggregate(rows: list) -> dict:
    ok = [r for r in rows if r["success"]]
    out = {
        "runs": len(rows),
        "successes": len(ok),
        "success_rate": len(ok) / len(rows),
        "exec_time_mean": "NA",
        "exec_time_std": "NA",
        "traj_len_mean": "NA",
        "traj_len_std": "NA",
        "rows": [dict(r) for r in rows],
    }
    if ok:
        times = np.array([r["exec_time_s"] for r in ok])
        lens = np.array([r["traj_len_m"] for r in ok])
        out["exec_time_mean"] = float(times.mean())
        out["traj_len_mean"] = float(lens.mean())
        if len(ok) >= 2:
            out["exec_time_std"] = float(times.std(ddof=1))
            out["traj_len_std"] = float(lens.std(ddof=1))
    return out


def run_suite(suite: BenchSuite, parallelism: int = 1, out_dir=None) -> BenchReport:
    """Run every (scenario, variant, run-index) cell with seed = base + index;
    cells run independently so parallel and serial execution agree exactly."""
    cells = [(spec, variant, suite.base_seed + k, suite.config, suite.timeout)
             for spec in suite.scenarios
             for variant in suite.variants
             for k in range(suite.runs)]
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(_execute_cell, cells, chunksize=1))
    else:
        rows = [execute_run(*c) for c in cells]
    rows.sort(key=lambda r: (r["scenario"], r["variant"], r["seed"]))
    report_cells = {}
    for spec in suite.scenarios:
        for variant in suite.variants:
            key = f"{spec.name}/{variant}"
            cell_rows = [r for r in rows if r["scenario"] == spec.name and r["variant"] == variant]
            report_cells[key] = _aggregate(cell_rows)
    note = ("means and standard deviations are computed over successful runs only; "
            "failed runs are counted in the success rate and listed with a reason")
    report = BenchReport(rows=rows, cells=report_cells, note=note)
    if out_dir is not None:
        report.write(out_dir)
    return report
