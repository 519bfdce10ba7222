"""Planning loop: simulated control cycles that move the robot along the best
branch of the risk-gated time tree while the tree grows toward the goal, with
feature flags reproducing the five compared planner variants."""
from __future__ import annotations

import dataclasses
import json
import math
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .heuristic import (DEFAULT_CLEARANCE_CELLS, DEFAULT_CORRIDOR_RADIUS_CELLS,
                        DEFAULT_MAX_ITER, ExternalModelGenerator,
                        OracleCorridorGenerator, RegionHub, SubprocessTransport,
                        TcpTransport)
from .kinematics import Control, ControlLimits, State
from .multitree import ROOT_TREE, SubTreeParams, SubTreeSet, find_closest_tree
from .sampler import (DEFAULT_BIAS_FLOOR, DEFAULT_GAMMA, AdaptiveSampler,
                      SamplerStats, uniform_state)
from .timetree import TimeTree, Trajectory, TrajectoryPoint, goal_reached
from .world import (RiskModel, Scenario, combine_moving, compose_risk,
                    per_obstacle_risk, static_collision_prob)

# variant -> (subtree mode, region mode)
VARIANTS = {
    "RISK": ("none", "off"),
    "BI": ("goal", "off"),
    "MULTI": ("full", "off"),
    "NMR": ("full", "static"),
    "NAMR": ("full", "adaptive"),
}

_SUBTREE_MODES = ("none", "goal", "full")
_REGION_MODES = ("off", "static", "adaptive")


@dataclass(frozen=True)
class GeneratorConfig:
    """How heuristic regions are produced: the built-in corridor generator or
    an external model over subprocess stdio / TCP."""

    mode: str = "oracle"
    command: tuple = ()
    host: str = "127.0.0.1"
    port: int = 0
    latency_cycles: int = 1
    response_timeout_s: float = 10.0

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown generator keys: {sorted(unknown)}")
        out = cls(**{**d, "command": tuple(d.get("command", ()))})
        if out.mode not in ("oracle", "subprocess", "tcp"):
            raise ConfigError(f"unknown generator mode: {out.mode!r}")
        return out


@dataclass(frozen=True)
class PlannerConfig:
    """Planner settings; None values fall back to scenario- or resolution-derived
    defaults at resolve time."""

    variant: str = "NAMR"
    dt: float | None = None
    goal_radius: float | None = None
    p_max: float = 0.1
    sigma_risk: float = 0.3
    footprint_radius: float = 0.2
    limits: ControlLimits = field(default_factory=ControlLimits)
    w1: float = 1.0
    w2: float = 0.5
    delta: float | None = None
    gamma: float = DEFAULT_GAMMA
    bias_floor: float = DEFAULT_BIAS_FLOOR
    max_iter: int = DEFAULT_MAX_ITER
    waypoint_stride: int = 1
    fixed_bias: float = 0.5
    corridor_radius_cells: int = DEFAULT_CORRIDOR_RADIUS_CELLS
    clearance_cells: int = DEFAULT_CLEARANCE_CELLS
    rho: float | None = None
    d_meet: float = 1.0
    omega: int = 20
    eps_guid: float | None = None
    step_len: float | None = None
    cycle_budget: int = 60
    max_subtree_nodes: int = 1500
    timeout: float = 240.0
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    wall_clock: bool = False
    features: tuple | None = None  # (subtree mode, region mode) override

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "limits" in d:
            lim = d["limits"]
            bad = set(lim) - {f.name for f in dataclasses.fields(ControlLimits)}
            if bad:
                raise ConfigError(f"unknown limits keys: {sorted(bad)}")
            d["limits"] = ControlLimits(**lim)
        if "generator" in d:
            d["generator"] = GeneratorConfig.from_dict(d["generator"])
        if "features" in d and d["features"] is not None:
            d["features"] = tuple(d["features"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "PlannerConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}")
        if self.cycle_budget < 1:
            raise ConfigError("cycle_budget must be >= 1")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if not (0 < self.p_max <= 1):
            raise ConfigError("p_max must lie in (0, 1]")
        if self.features is not None:
            sub, reg = self.features
            if sub not in _SUBTREE_MODES or reg not in _REGION_MODES:
                raise ConfigError(f"bad features override: {self.features!r}")

    def resolve(self, scenario: Scenario) -> "ResolvedConfig":
        res = scenario.grid.resolution
        eps = self.goal_radius if self.goal_radius is not None else scenario.goal_radius
        return ResolvedConfig(
            variant=self.variant,
            dt=self.dt if self.dt is not None else scenario.dt,
            eps=eps,
            p_max=self.p_max,
            sigma_risk=self.sigma_risk,
            footprint_radius=self.footprint_radius,
            limits=self.limits,
            w1=self.w1,
            w2=self.w2,
            delta=self.delta if self.delta is not None else 2.0 * self.corridor_radius_cells * res,
            gamma=self.gamma,
            bias_floor=self.bias_floor,
            max_iter=self.max_iter,
            waypoint_stride=self.waypoint_stride,
            fixed_bias=self.fixed_bias,
            corridor_radius_cells=self.corridor_radius_cells,
            clearance_cells=self.clearance_cells,
            rho=self.rho if self.rho is not None else 5.0 * res,
            d_meet=self.d_meet,
            omega=self.omega,
            eps_guid=self.eps_guid if self.eps_guid is not None else eps,
            step_len=self.step_len if self.step_len is not None else 3.0 * res,
            cycle_budget=self.cycle_budget,
            max_subtree_nodes=self.max_subtree_nodes,
            horizon_depth=scenario.horizon_depth,
            timeout=self.timeout,
            seed=self.seed,
            generator=self.generator,
            wall_clock=self.wall_clock,
            features=self.features if self.features is not None else VARIANTS[self.variant],
        )


@dataclass(frozen=True)
class ResolvedConfig:
    variant: str
    dt: float
    eps: float
    p_max: float
    sigma_risk: float
    footprint_radius: float
    limits: ControlLimits
    w1: float
    w2: float
    delta: float
    gamma: float
    bias_floor: float
    max_iter: int
    waypoint_stride: int
    fixed_bias: float
    corridor_radius_cells: int
    clearance_cells: int
    rho: float
    d_meet: float
    omega: int
    eps_guid: float
    step_len: float
    cycle_budget: int
    max_subtree_nodes: int
    horizon_depth: int
    timeout: float
    seed: int
    generator: GeneratorConfig
    wall_clock: bool
    features: tuple


@dataclass
class PlanStats:
    """Run counters and traces for benchmarking and acceptance checks."""

    cycles: int = 0
    nodes_added: int = 0
    risk_pruned: int = 0
    reroot_pruned: int = 0
    stops: int = 0
    evasions: int = 0
    meets_handled: int = 0
    subtree_nodes: int = 0
    subtree_count: int = 0
    subtree_merges: int = 0
    subtree_spawns: int = 0
    region_version: int = 0
    generator_fallback: bool = False
    sampler: SamplerStats = field(default_factory=SamplerStats)
    nodes_per_cycle: list = field(default_factory=list)
    prunes_per_cycle: list = field(default_factory=list)
    version_per_cycle: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cycles": self.cycles,
            "nodes_added": self.nodes_added,
            "risk_pruned": self.risk_pruned,
            "reroot_pruned": self.reroot_pruned,
            "stops": self.stops,
            "evasions": self.evasions,
            "meets_handled": self.meets_handled,
            "subtree_nodes": self.subtree_nodes,
            "subtree_count": self.subtree_count,
            "subtree_merges": self.subtree_merges,
            "subtree_spawns": self.subtree_spawns,
            "region_version": self.region_version,
            "generator_fallback": self.generator_fallback,
            "refresh_requests": self.sampler.refresh_requests,
            "bias_trace": list(self.sampler.bias_trace),
            "trigger_samples": list(self.sampler.trigger_samples),
            "apply_samples": [list(p) for p in self.sampler.apply_samples],
            "nodes_per_cycle": list(self.nodes_per_cycle),
            "prunes_per_cycle": list(self.prunes_per_cycle),
            "version_per_cycle": list(self.version_per_cycle),
        }


@dataclass
class PlanOutcome:
    success: bool
    execution_time: float
    trajectory: Trajectory
    stats: PlanStats

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "execution_time_s": self.execution_time,
            "trajectory": [[p.state.x, p.state.y, p.state.theta,
                            p.control.v, p.control.w, p.t] for p in self.trajectory.points],
            "trajectory_length_m": self.trajectory.total_length,
            "stats": self.stats.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def trajectory_length(trajectory: Trajectory) -> float:
    """Total distance traveled: the sum of per-segment arc lengths."""
    return trajectory.total_length


def _build_hub(rc: ResolvedConfig, scenario: Scenario, goal_cell) -> RegionHub:
    gen_cfg = rc.generator
    oracle = OracleCorridorGenerator(rc.clearance_cells, rc.corridor_radius_cells)
    if gen_cfg.mode == "oracle":
        generator, external = oracle, False
    elif gen_cfg.mode == "subprocess":
        transport = SubprocessTransport(gen_cfg.command)
        generator = ExternalModelGenerator(transport, gen_cfg.response_timeout_s)
        external = True
    else:
        transport = TcpTransport(gen_cfg.host, gen_cfg.port)
        generator = ExternalModelGenerator(transport, gen_cfg.response_timeout_s)
        external = True
    return RegionHub(scenario.grid, goal_cell, generator, rc.max_iter,
                     gen_cfg.latency_cycles, external=external, fallback=oracle)


def plan(scenario: Scenario, config: PlannerConfig, dump_dir=None) -> PlanOutcome:
    """Run the simulated control loop until the robot's node enters the goal
    region or the simulated timeout elapses.

    Each cycle the clock advances one dt, obstacle observations replay up to
    the new time, the robot takes the next node of the current best branch if
    that node still passes the risk gate (otherwise it stops in place and the
    tree is re-timed), the tree is re-rooted at the robot and pruned against
    fresh predictions, and one growth cycle runs.
    """
    rc = config.resolve(scenario)
    rng = np.random.default_rng(rc.seed)
    grid = scenario.grid
    model = RiskModel(scenario, rc.footprint_radius, rc.sigma_risk)
    scenario.observe_up_to(0.0)
    horizon_s = scenario.horizon_depth * rc.dt
    model.refresh(0.0, horizon_s)

    start = scenario.start
    goal_state = State(scenario.goal[0], scenario.goal[1], 0.0)
    goal_cell = grid.cell_of(*scenario.goal)
    ps0 = model.static_prob(start.x, start.y)
    tree = TimeTree(start, 0.0, rc.dt, root_risk=model.node_risk(start.x, start.y, 0.0, ps0),
                    root_static=ps0)
    current = tree.root

    subtree_mode, region_mode = rc.features
    subtrees = None
    if subtree_mode != "none":
        subtrees = SubTreeSet(grid, goal_state, rc.eps,
                              SubTreeParams(rc.rho, rc.d_meet, rc.step_len,
                                            spawn_enabled=(subtree_mode == "full")))
    stats = PlanStats()
    sampler = None
    hub = None
    if region_mode != "off":
        hub = _build_hub(rc, scenario, goal_cell)
        sampler = AdaptiveSampler(grid, goal_cell, hub, rc.delta, rc.gamma, rc.bias_floor,
                                  rc.waypoint_stride, adaptive=(region_mode == "adaptive"),
                                  fixed_bias=rc.fixed_bias, stats=stats.sampler)
        sampler.initialize(start)

    executed = [TrajectoryPoint(start, Control(0.0, 0.0), 0.0)]
    success = goal_reached(start, scenario)
    exec_time = 0.0
    best_ids = None
    max_cycles = int(math.floor(rc.timeout / rc.dt + 1e-9))

    def extend_fn(target: State):
        nid = tree.extend(target, model, rc.limits, rc.w1, rc.w2, rc.p_max, rng)
        if nid is None:
            return None
        stats.nodes_added += 1
        x, y = float(tree.x[nid]), float(tree.y[nid])
        if subtrees is not None:
            subtrees.note_root_insert(x, y)
        if sampler is not None:
            sampler.note_chain_growth(x, y)
        return x, y

    try:
        if not success:
            for cycle in range(1, max_cycles + 1):
                t_new = cycle * rc.dt
                scenario.observe_up_to(t_new)
                model.refresh(t_new, horizon_s)
                moved = False
                if (best_ids is not None and len(best_ids) >= 2
                        and best_ids[0] == current and tree.alive[best_ids[1]]):
                    nxt = best_ids[1]
                    risk = model.node_risk(float(tree.x[nxt]), float(tree.y[nxt]), t_new)
                    if risk <= rc.p_max:
                        current = nxt
                        moved = True
                if not moved and _stay_threatened(tree, current, model, rc, t_new):
                    # waiting here is predicted to become dangerous: take the
                    # least-risk admissible child, or swerve straight away from
                    # the closest predicted mover if no child exists
                    flee = _safest_child(tree, current, model, rc, t_new)
                    if flee is None:
                        flee = _emergency_step(tree, current, model, rc, rng, t_new)
                    if flee is not None:
                        current = flee
                        moved = True
                        stats.evasions += 1
                if moved:
                    executed.append(TrajectoryPoint(tree.node_state(current),
                                                    tree.node_control(current), t_new))
                else:
                    stats.stops += 1
                    if tree.v[current] != 0.0 or tree.w[current] != 0.0:
                        tree.brake(current, rc.limits)
                    executed.append(TrajectoryPoint(tree.node_state(current),
                                                    Control(0.0, 0.0), t_new))
                risk_pruned, reroot_pruned = tree.prune_invalid(current, t_new, model, rc.p_max)
                stats.risk_pruned += risk_pruned
                stats.reroot_pruned += reroot_pruned
                if subtrees is not None:
                    subtrees.refresh_root_distances(tree)
                stats.cycles = cycle
                cur_state = tree.node_state(current)
                if goal_reached(cur_state, scenario):
                    success = True
                    exec_time = t_new
                    break
                nodes_before = stats.nodes_added
                _grow_cycle(tree, subtrees, sampler, extend_fn, cur_state, goal_state,
                            scenario, grid, rc, rng, stats, cycle)
                best_ids = tree.best_path(goal_state, rc.w1, rc.w2)
                stats.nodes_per_cycle.append(stats.nodes_added - nodes_before)
                stats.prunes_per_cycle.append(risk_pruned)
                stats.version_per_cycle.append(sampler.region_version if sampler else 0)
            else:
                exec_time = rc.timeout
    finally:
        if hub is not None:
            stats.generator_fallback = hub.fell_back
            hub.close()

    if subtrees is not None:
        stats.subtree_nodes = subtrees.node_count()
        stats.subtree_count = subtrees.tree_count()
        stats.subtree_merges = subtrees.merges
        stats.subtree_spawns = subtrees.spawns
    stats.region_version = sampler.region_version if sampler else 0

    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)
        tree.dump_csv(dump_dir / "roottree.csv")
        if subtrees is not None:
            for label in sorted(subtrees.labels):
                subtrees.dump_csv(dump_dir / f"subtree_{label}.csv", label)

    return PlanOutcome(success, exec_time, Trajectory(executed, rc.dt), stats)


def _grow_cycle(tree: TimeTree, subtrees, sampler, extend_fn, cur_state: State,
                goal_state: State, scenario: Scenario, grid, rc: ResolvedConfig,
                rng, stats: PlanStats, cycle: int):
    goal_linked = tree.touches_goal(scenario)
    it = 0
    deadline = _time.monotonic() + rc.dt if rc.wall_clock else None
    handled: set = set()  # subtrees whose guidance already ran this cycle

    def budget_left():
        if rc.wall_clock:
            return _time.monotonic() < deadline
        return it < rc.cycle_budget

    while budget_left():
        if subtrees is not None and not goal_linked:
            met = _eligible_meet(subtrees, handled)
            if met is not None:
                cap = None if rc.wall_clock else rc.cycle_budget - it
                outcome, used = subtrees.subtree_sample(met, extend_fn, rc.eps_guid,
                                                        rc.omega, max_attempts=cap)
                it += max(1, used)
                stats.meets_handled += 1
                handled.add(met)
                if outcome == "reached":
                    goal_linked = True
                continue
        if sampler is not None:
            q = sampler.sample(cur_state, rng, cycle)
        else:
            q = uniform_state(grid, rng)
        it += 1
        which = find_closest_tree(tree, subtrees, q) if subtrees is not None else ROOT_TREE
        if which != ROOT_TREE and subtrees.node_count() >= rc.max_subtree_nodes:
            which = ROOT_TREE  # the heuristic forest is large enough; feed the root tree
        if which == ROOT_TREE:
            new = extend_fn(q)
            if new is not None and math.hypot(new[0] - scenario.goal[0],
                                              new[1] - scenario.goal[1]) < scenario.goal_radius:
                goal_linked = True
        else:
            subtrees.multi_search(q)


def _stay_threatened(tree: TimeTree, current: int, model, rc: ResolvedConfig,
                     t_new: float) -> bool:
    """Standing still is predicted to violate the risk gate within the horizon."""
    x, y = float(tree.x[current]), float(tree.y[current])
    for k in range(0, rc.horizon_depth + 1):
        if model.node_risk(x, y, t_new + k * rc.dt) > rc.p_max:
            return True
    return False


def _emergency_step(tree: TimeTree, current: int, model, rc: ResolvedConfig,
                    rng, t_new: float):
    """Roll evasive candidates directly from the robot node, aiming straight
    away from the nearest predicted mover; the gate still applies."""
    x, y = float(tree.x[current]), float(tree.y[current])
    best = None
    for obs in model.scenario.obstacles:
        pos = obs.predicted_position(t_new)
        if pos is None:
            continue
        d = math.hypot(x - pos[0], y - pos[1])
        if best is None or d < best[0]:
            best = (d, pos)
    if best is None:
        return None
    d, pos = best
    if d < 1e-9:
        away = (1.0, 0.0)
    else:
        away = ((x - pos[0]) / d, (y - pos[1]) / d)
    target = State(x + away[0], y + away[1], math.atan2(away[1], away[0]))
    for _ in range(3):
        nid = tree.extend(target, model, rc.limits, rc.w1, rc.w2, rc.p_max, rng,
                          source=current)
        if nid is not None:
            return nid
    return None


def _safest_child(tree: TimeTree, current: int, model, rc: ResolvedConfig, t_new: float):
    best = None
    for c in tree.children[current]:
        if not tree.alive[c]:
            continue
        risk = model.node_risk(float(tree.x[c]), float(tree.y[c]), t_new)
        if risk <= rc.p_max and (best is None or risk < best[0]):
            best = (risk, c)
    return None if best is None else best[1]


def _eligible_meet(subtrees: SubTreeSet, handled=frozenset()):
    best = None
    for label in subtrees.labels:
        if label in handled:
            continue
        if (subtrees.label_min_root.get(label, math.inf) < subtrees.params.d_meet
                and subtrees.has_unconsumed(label)):
            if best is None or label < best:
                best = label
    return best


def replay_safety(scenario: Scenario, outcome: PlanOutcome, footprint_radius: float,
                  sigma_risk: float, p_max: float) -> list[dict]:
    """Re-simulate an executed trajectory against ground-truth obstacle
    positions. Returns one record per violation: a node whose risk exceeds the
    gate or that geometrically overlaps an obstacle disc (empty list = safe)."""
    violations = []
    for k, point in enumerate(outcome.trajectory.points):
        px, py, t = point.state.x, point.state.y, point.t
        ps = static_collision_prob(scenario.grid, (px, py), footprint_radius)
        risks = []
        overlap = False
        for obs in scenario.obstacles:
            ox, oy = obs.true_position(t)
            d = math.hypot(px - ox, py - oy)
            contact = footprint_radius + obs.radius
            if d < contact:
                overlap = True
            risks.append(per_obstacle_risk(d, contact, sigma_risk))
        total = compose_risk(ps, combine_moving(risks))
        if total > p_max or overlap:
            violations.append({"index": k, "t": t, "risk": total, "overlap": overlap})
    return violations
