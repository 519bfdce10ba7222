"""Environment model: static occupancy grid, dynamic obstacles with trajectory
playback and constant-velocity prediction, and the combined collision risk of
a disc-shaped robot at a given time."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import NoObservation, ParseError, ValidationError
from .kinematics import State

DEFAULT_SIGMA_RISK = 0.3

# Slack (in cells) for the distance-field screen in static_collision_prob.
# A query point sits at most sqrt(2)/2 cells from its cell center, and an
# occupied cell's rectangle extends at most sqrt(2)/2 cells from its center.
_EDT_SLACK_LO = 1.5
_EDT_SLACK_HI = 0.71


class StaticMap:
    """Occupancy grid with per-cell static collision probability in [0, 1].

    cells[cy, cx] covers [cx*res, (cx+1)*res] x [cy*res, (cy+1)*res] in world
    coordinates. Loaded maps are binary {0, 1}; fractional values are accepted
    for completeness but never produced by the loaders.
    """

    def __init__(self, cells: np.ndarray, resolution: float):
        cells = np.asarray(cells, dtype=np.float64)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ValidationError("map must be a non-empty 2-D grid")
        if resolution <= 0:
            raise ValidationError("map resolution must be positive")
        if np.any(cells < 0) or np.any(cells > 1) or not np.all(np.isfinite(cells)):
            raise ValidationError("cell occupancy values must lie in [0, 1]")
        self.cells = cells
        self.cells.setflags(write=False)
        self.resolution = float(resolution)
        self.height, self.width = cells.shape
        self.is_binary = bool(np.all((cells == 0.0) | (cells == 1.0)))
        self._edt = None  # lazy: distance (m) from cell centers to occupied cell centers

    @property
    def world_width(self) -> float:
        return self.width * self.resolution

    @property
    def world_height(self) -> float:
        return self.height * self.resolution

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(x // self.resolution), int(y // self.resolution)

    def cell_center(self, cx: int, cy: int) -> tuple[float, float]:
        return (cx + 0.5) * self.resolution, (cy + 0.5) * self.resolution

    def in_bounds_cell(self, cx: int, cy: int) -> bool:
        return 0 <= cx < self.width and 0 <= cy < self.height

    def occupancy_grid(self) -> np.ndarray:
        """Binary occupancy (1 = occupied) used by region generation and the wire protocol."""
        return (self.cells >= 0.5).astype(np.uint8)

    def point_occupied(self, x: float, y: float) -> bool:
        """Occupancy of the single cell under a point; out of bounds counts occupied."""
        cx, cy = self.cell_of(x, y)
        if not self.in_bounds_cell(cx, cy):
            return True
        return self.cells[cy, cx] >= 0.5

    def _distance_field(self) -> np.ndarray:
        if self._edt is None:
            free = self.cells < 0.5
            self._edt = ndimage.distance_transform_edt(free, sampling=self.resolution)
        return self._edt


def static_collision_prob(grid: StaticMap, position, footprint_radius: float) -> float:
    """Maximum static occupancy over every cell the robot disc touches.

    Any part of the disc leaving the map counts as a certain collision.
    """
    px, py = float(position[0]), float(position[1])
    r = float(footprint_radius)
    res = grid.resolution
    if px - r < 0.0 or py - r < 0.0 or px + r > grid.world_width or py + r > grid.world_height:
        return 1.0
    if grid.is_binary:
        cx, cy = grid.cell_of(px, py)
        d = grid._distance_field()[cy, cx]
        if d - _EDT_SLACK_LO * res > r:
            return 0.0
        if d + _EDT_SLACK_HI * res <= r:
            return 1.0
    ix0 = max(0, int((px - r) // res))
    ix1 = min(grid.width - 1, int((px + r) // res))
    iy0 = max(0, int((py - r) // res))
    iy1 = min(grid.height - 1, int((py + r) // res))
    best = 0.0
    r2 = r * r
    for iy in range(iy0, iy1 + 1):
        ny = min(max(py, iy * res), (iy + 1) * res)
        dy2 = (py - ny) ** 2
        if dy2 > r2:
            continue
        for ix in range(ix0, ix1 + 1):
            nx = min(max(px, ix * res), (ix + 1) * res)
            if (px - nx) ** 2 + dy2 <= r2:
                p = grid.cells[iy, ix]
                if p > best:
                    best = p
                    if best >= 1.0:
                        return 1.0
    return best


@dataclass
class DynamicObstacle:
    """Disc obstacle following a recorded trajectory.

    `observed_up_to` is the playback cursor: prediction may only consult
    samples at or before it, so planning never peeks at the future.
    """

    obstacle_id: str
    radius: float
    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    observed_up_to: float = -math.inf

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.float64)
        if self.radius <= 0:
            raise ValidationError(f"obstacle {self.obstacle_id}: radius must be positive")
        if len(self.times) == 0:
            raise ValidationError(f"obstacle {self.obstacle_id}: needs at least one sample")
        if len(self.times) != len(self.xs) or len(self.times) != len(self.ys):
            raise ValidationError(f"obstacle {self.obstacle_id}: ragged sample arrays")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError(f"obstacle {self.obstacle_id}: timestamps must strictly increase")
        if not (np.all(np.isfinite(self.xs)) and np.all(np.isfinite(self.ys))):
            raise ValidationError(f"obstacle {self.obstacle_id}: positions must be finite")

    def observe_up_to(self, t: float):
        self.observed_up_to = float(t)

    def anchor(self, limit: float):
        """Constant-velocity anchor (t0, x0, y0, vx, vy) fit to the last two
        samples observed at or before `limit`; zero velocity with one sample;
        None when nothing has been observed yet."""
        limit = min(limit, self.observed_up_to)
        k = int(np.searchsorted(self.times, limit, side="right"))
        if k == 0:
            return None
        t0, x0, y0 = self.times[k - 1], self.xs[k - 1], self.ys[k - 1]
        if k == 1:
            return float(t0), float(x0), float(y0), 0.0, 0.0
        tp, xp, yp = self.times[k - 2], self.xs[k - 2], self.ys[k - 2]
        inv = 1.0 / (t0 - tp)
        return float(t0), float(x0), float(y0), float((x0 - xp) * inv), float((y0 - yp) * inv)

    def predicted_position(self, t: float):
        """Position at t extrapolated from the currently observed samples, or
        None when the obstacle has not been observed yet."""
        a = self.anchor(t)
        if a is None:
            return None
        t0, x0, y0, vx, vy = a
        return x0 + vx * (t - t0), y0 + vy * (t - t0)

    def true_position(self, t: float):
        """Ground-truth position at t: linear interpolation of the full sample
        record, clamped at both ends. Replay/oracle use only."""
        x = float(np.interp(t, self.times, self.xs))
        y = float(np.interp(t, self.times, self.ys))
        return x, y


def predict_position(obstacle: DynamicObstacle, from_t: float, steps: int, dt: float):
    """Predicted positions at from_t, from_t + dt, ..., from_t + steps*dt.

    Uses constant-velocity extrapolation from the last two samples observed at
    or before both from_t and the playback cursor.
    """
    a = obstacle.anchor(from_t)
    if a is None:
        raise NoObservation(f"obstacle {obstacle.obstacle_id}: no sample at or before t={from_t}")
    t0, x0, y0, vx, vy = a
    out = []
    for k in range(steps + 1):
        t = from_t + k * dt
        out.append((x0 + vx * (t - t0), y0 + vy * (t - t0)))
    return out


def per_obstacle_risk(distance: float, contact_radius: float, sigma_risk: float = DEFAULT_SIGMA_RISK) -> float:
    """Risk contributed by one moving obstacle: certain at contact, falling off
    as a Gaussian in the clearance beyond contact."""
    gap = distance - contact_radius
    if gap <= 0.0:
        return 1.0
    return math.exp(-(gap * gap) / (2.0 * sigma_risk * sigma_risk))


def combine_moving(risks) -> float:
    """Total moving risk: complement of the product of per-obstacle non-collision
    probabilities. Zero for no obstacles."""
    total = 1.0
    for p in risks:
        total *= 1.0 - p
    return 1.0 - total


def compose_risk(p_static: float, p_moving: float) -> float:
    """Combine static and moving collision probabilities."""
    return p_static + (1.0 - p_static) * p_moving


def moving_collision_prob(obstacles, position, footprint_radius: float, t: float,
                          sigma_risk: float = DEFAULT_SIGMA_RISK) -> float:
    """Collision probability against all moving obstacles at time t, using each
    obstacle's predicted position. Obstacles not yet observed contribute nothing.
    """
    px, py = float(position[0]), float(position[1])
    risks = []
    for obs in obstacles:
        pos = obs.predicted_position(t)
        if pos is None:
            continue
        d = math.hypot(px - pos[0], py - pos[1])
        risks.append(per_obstacle_risk(d, footprint_radius + obs.radius, sigma_risk))
    return combine_moving(risks)


def collision_prob(grid: StaticMap, obstacles, position, footprint_radius: float, t: float,
                   sigma_risk: float = DEFAULT_SIGMA_RISK) -> float:
    """Total collision probability at (position, t): static risk saturates, the
    moving term fills the remaining probability mass."""
    p_static = static_collision_prob(grid, position, footprint_radius)
    if p_static >= 1.0:
        return 1.0
    p_moving = moving_collision_prob(obstacles, position, footprint_radius, t, sigma_risk)
    return compose_risk(p_static, p_moving)


@dataclass
class Scenario:
    """A planning problem: map, obstacle playback, endpoints, and timing."""

    grid: StaticMap
    obstacles: list
    start: State
    goal: tuple[float, float]
    goal_radius: float
    dt: float
    horizon_depth: int = 10

    def __post_init__(self):
        if self.goal_radius <= 0:
            raise ValidationError("goal_radius must be positive")
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if self.horizon_depth < 1:
            raise ValidationError("horizon_depth must be >= 1")
        for label, (x, y) in (("start", (self.start.x, self.start.y)), ("goal", self.goal)):
            cx, cy = self.grid.cell_of(x, y)
            if not self.grid.in_bounds_cell(cx, cy):
                raise ValidationError(f"{label} lies outside the map")
            if self.grid.cells[cy, cx] >= 0.5:
                raise ValidationError(f"{label} lies in an occupied cell")

    def observe_up_to(self, t: float):
        for obs in self.obstacles:
            obs.observe_up_to(t)


class RiskModel:
    """Per-run risk evaluator. refresh(t) re-anchors every obstacle's
    constant-velocity prediction at the current playback cursor so node risk
    queries are O(1) arithmetic; results match the module-level operations.

    Predictions degrade with lookahead in two ways. First, an obstacle's
    position at t is only known within a disc that grows at the obstacle's own
    speed, so the contact radius inflates by speed * lookahead (capped at a
    short commitment window); within that window an accepted node stays
    acceptable no matter how the obstacle turns, and deeper nodes are
    re-validated every cycle before the robot can reach them. Second, beyond the
    prediction horizon the obstacle is frozen at its horizon position and the
    risk decays exponentially, so stale extrapolations cannot freeze deep tree
    growth. Queries at zero lookahead (the move gate, replay) are exact and
    match the module-level operations bit for bit.
    """

    def __init__(self, scenario: Scenario, footprint_radius: float,
                 sigma_risk: float = DEFAULT_SIGMA_RISK,
                 horizon_decay_rate: float = 0.5,
                 uncertainty_growth: float = 1.0,
                 uncertainty_horizon_s: float = 2.0):
        self.scenario = scenario
        self.grid = scenario.grid
        self.footprint = float(footprint_radius)
        self.sigma = float(sigma_risk)
        self.horizon_decay_rate = float(horizon_decay_rate)
        self.uncertainty_growth = float(uncertainty_growth)
        self.uncertainty_horizon_s = float(uncertainty_horizon_s)
        self._now = 0.0
        self._horizon = math.inf
        self._speed = np.zeros(0)
        self._t0 = np.zeros(0)
        self._x0 = np.zeros(0)
        self._y0 = np.zeros(0)
        self._vx = np.zeros(0)
        self._vy = np.zeros(0)
        self._contact = np.zeros(0)

    def refresh(self, t: float, horizon_s: float = math.inf):
        """Re-fit prediction anchors after the playback cursor advanced to t;
        horizon_s bounds how far ahead the predictions are trusted."""
        self._now = t
        self._horizon = t + horizon_s
        anchors = []
        for obs in self.scenario.obstacles:
            a = obs.anchor(t)
            if a is not None:
                anchors.append(a + (self.footprint + obs.radius,))
        if anchors:
            arr = np.asarray(anchors, dtype=np.float64)
            self._t0, self._x0, self._y0, self._vx, self._vy, self._contact = arr.T
            self._speed = np.hypot(self._vx, self._vy)
        else:
            self._t0 = self._x0 = self._y0 = self._vx = self._vy = self._contact = np.zeros(0)
            self._speed = np.zeros(0)

    def static_prob(self, x: float, y: float) -> float:
        return static_collision_prob(self.grid, (x, y), self.footprint)

    def moving_prob(self, x: float, y: float, t: float) -> float:
        if len(self._t0) == 0:
            return 0.0
        tau = min(t, self._horizon)
        lookahead = min(max(t - self._now, 0.0), self.uncertainty_horizon_s)
        ox = self._x0 + self._vx * (tau - self._t0)
        oy = self._y0 + self._vy * (tau - self._t0)
        grow = self.uncertainty_growth * self._speed * lookahead
        gap = np.hypot(x - ox, y - oy) - self._contact - grow
        risks = np.where(gap <= 0.0, 1.0, np.exp(-(gap * gap) / (2.0 * self.sigma * self.sigma)))
        if t > self._horizon:
            risks = risks * math.exp(-self.horizon_decay_rate * (t - self._horizon))
        return float(1.0 - np.prod(1.0 - risks))

    def node_risk(self, x: float, y: float, t: float, p_static: float | None = None) -> float:
        ps = self.static_prob(x, y) if p_static is None else p_static
        if ps >= 1.0:
            return 1.0
        return compose_risk(ps, self.moving_prob(x, y, t))

    def moving_prob_many(self, xs: np.ndarray, ys: np.ndarray, ts: np.ndarray) -> np.ndarray:
        """Vectorized moving risk for parallel node arrays (used by pruning)."""
        if len(self._t0) == 0:
            return np.zeros_like(xs)
        taus = np.minimum(ts, self._horizon)
        over = np.maximum(ts - self._horizon, 0.0)
        decay = np.exp(-self.horizon_decay_rate * over)
        lookahead = np.clip(ts - self._now, 0.0, self.uncertainty_horizon_s)
        keep = np.ones_like(xs)
        for i in range(len(self._t0)):
            ox = self._x0[i] + self._vx[i] * (taus - self._t0[i])
            oy = self._y0[i] + self._vy[i] * (taus - self._t0[i])
            grow = self.uncertainty_growth * self._speed[i] * lookahead
            gap = np.hypot(xs - ox, ys - oy) - self._contact[i] - grow
            risk = np.where(gap <= 0.0, 1.0, np.exp(-(gap * gap) / (2.0 * self.sigma * self.sigma)))
            keep *= 1.0 - risk * decay
        return 1.0 - keep


# ---------------------------------------------------------------------------
# File formats


def load_map(path) -> StaticMap:
    """Read an ASCII grid map: header line `W H RESOLUTION`, then H rows of
    W characters, `#` occupied and `.` free."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read map file {path}: {exc}") from exc
    if not lines:
        raise ParseError(f"{path}: empty map file")
    head = lines[0].split()
    if len(head) != 3:
        raise ParseError(f"{path}: header must be 'W H RESOLUTION'")
    try:
        width, height, resolution = int(head[0]), int(head[1]), float(head[2])
    except ValueError as exc:
        raise ParseError(f"{path}: bad header values: {exc}") from exc
    rows = lines[1:]
    if len(rows) < height:
        raise ParseError(f"{path}: expected {height} rows, found {len(rows)}")
    cells = np.zeros((height, width), dtype=np.float64)
    for cy in range(height):
        row = rows[cy]
        if len(row) != width:
            raise ParseError(f"{path}: row {cy} has length {len(row)}, expected {width}")
        for cx, ch in enumerate(row):
            if ch == "#":
                cells[cy, cx] = 1.0
            elif ch != ".":
                raise ParseError(f"{path}: row {cy}: unexpected character {ch!r}")
    return StaticMap(cells, resolution)


def save_map(path, grid: StaticMap):
    occ = grid.occupancy_grid()
    lines = [f"{grid.width} {grid.height} {grid.resolution!r}"]
    for cy in range(grid.height):
        lines.append("".join("#" if occ[cy, cx] else "." for cx in range(grid.width)))
    Path(path).write_text("\n".join(lines) + "\n")


TRAJECTORY_HEADER = ["obstacle_id", "t", "x", "y", "radius"]


def load_trajectories(path) -> list[DynamicObstacle]:
    """Read the obstacle trajectory CSV (header obstacle_id,t,x,y,radius,
    rows sorted by (obstacle_id, t), SI units)."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise ParseError(f"cannot read trajectory file {path}: {exc}") from exc
    if not rows or rows[0] != TRAJECTORY_HEADER:
        raise ParseError(f"{path}: first line must be '{','.join(TRAJECTORY_HEADER)}'")
    grouped: dict[str, list[tuple[float, float, float, float]]] = {}
    order: list[str] = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 5:
            raise ParseError(f"{path}: line {i}: expected 5 fields, got {len(row)}")
        oid = row[0]
        try:
            t, x, y, radius = (float(v) for v in row[1:])
        except ValueError as exc:
            raise ParseError(f"{path}: line {i}: {exc}") from exc
        if oid not in grouped:
            grouped[oid] = []
            order.append(oid)
        grouped[oid].append((t, x, y, radius))
    obstacles = []
    for oid in order:
        samples = grouped[oid]
        ts = [s[0] for s in samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError(f"{path}: obstacle {oid}: timestamps must strictly increase")
        radii = {s[3] for s in samples}
        if len(radii) != 1:
            raise ValidationError(f"{path}: obstacle {oid}: radius must be constant")
        obstacles.append(DynamicObstacle(
            obstacle_id=oid,
            radius=samples[0][3],
            times=np.array(ts),
            xs=np.array([s[1] for s in samples]),
            ys=np.array([s[2] for s in samples]),
        ))
    return obstacles


def save_trajectories(path, obstacles):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        for obs in obstacles:
            for t, x, y in zip(obs.times, obs.xs, obs.ys):
                writer.writerow([obs.obstacle_id, repr(float(t)), repr(float(x)),
                                 repr(float(y)), repr(float(obs.radius))])


SCENARIO_KEYS = {"map", "trajectories", "start", "goal", "goal_radius", "dt", "horizon_depth"}


def load_scenario(path) -> Scenario:
    """Read a scenario descriptor (JSON) and the map/trajectory files it names."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: scenario must be a JSON object")
    unknown = set(raw) - SCENARIO_KEYS
    if unknown:
        raise ParseError(f"{path}: unknown scenario keys: {sorted(unknown)}")
    missing = {"map", "start", "goal", "goal_radius", "dt"} - set(raw)
    if missing:
        raise ParseError(f"{path}: missing scenario keys: {sorted(missing)}")
    grid = load_map(path.parent / raw["map"])
    traj = raw.get("trajectories")
    obstacles = load_trajectories(path.parent / traj) if traj else []
    try:
        sx, sy, stheta = (float(v) for v in raw["start"])
        gx, gy = (float(v) for v in raw["goal"])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: start must be [x, y, theta] and goal [x, y]: {exc}") from exc
    return Scenario(
        grid=grid,
        obstacles=obstacles,
        start=State(sx, sy, stheta),
        goal=(gx, gy),
        goal_radius=float(raw["goal_radius"]),
        dt=float(raw["dt"]),
        horizon_depth=int(raw.get("horizon_depth", 10)),
    )


def save_scenario(path, grid_file: str, trajectory_file: str | None, start: State,
                  goal, goal_radius: float, dt: float, horizon_depth: int = 10):
    doc = {
        "map": grid_file,
        "trajectories": trajectory_file,
        "start": [start.x, start.y, start.theta],
        "goal": [goal[0], goal[1]],
        "goal_radius": goal_radius,
        "dt": dt,
        "horizon_depth": horizon_depth,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
