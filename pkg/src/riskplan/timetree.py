"""Time-parameterized tree: every node carries an absolute timestamp derived
from its depth, insertion is risk-gated, pruning re-validates the tree against
fresh obstacle predictions and re-roots it at the robot's node."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .kinematics import (Control, ControlLimits, State, crawl_controls,
                         motion_cost_array, propagate, reachable_controls)
from .world import RiskModel, Scenario

# extension attempts from one node that may fail before it is closed for the cycle
EXTEND_FAIL_CAP = 6


def goal_reached(state: State, scenario: Scenario) -> bool:
    """Strictly inside the goal disc."""
    return math.hypot(state.x - scenario.goal[0], state.y - scenario.goal[1]) < scenario.goal_radius


@dataclass
class TrajectoryPoint:
    state: State
    control: Control
    t: float


@dataclass
class Trajectory:
    """Chronological (state, arrival control, timestamp) chain; segment arc
    lengths are |v| * dt because controls are held for exactly one step."""

    points: list
    dt: float

    @property
    def total_length(self) -> float:
        return sum(abs(p.control.v) * self.dt for p in self.points[1:])

    def final_state(self) -> State:
        return self.points[-1].state

    def __len__(self):
        return len(self.points)


class TimeTree:
    """Arena-backed tree. Node ids are stable row indices; pruned rows are
    masked dead rather than reused, which keeps ids and tie-breaks stable."""

    def __init__(self, root_state: State, t_root: float, dt: float,
                 root_control: Control = Control(0.0, 0.0), root_risk: float = 0.0,
                 root_static: float = 0.0, capacity: int = 1024):
        self.dt = float(dt)
        self.t_root = float(t_root)
        self.capacity = capacity
        self.x = np.zeros(capacity)
        self.y = np.zeros(capacity)
        self.theta = np.zeros(capacity)
        self.v = np.zeros(capacity)
        self.w = np.zeros(capacity)
        self.depth = np.zeros(capacity, dtype=np.int32)
        self.t = np.zeros(capacity)
        self.parent = np.full(capacity, -1, dtype=np.int64)
        self.risk = np.zeros(capacity)
        self.static_p = np.zeros(capacity)
        self.alive = np.zeros(capacity, dtype=bool)
        self.children: list[list[int]] = [[] for _ in range(capacity)]
        self.n_children_alive = np.zeros(capacity, dtype=np.int32)
        self.fail_count = np.zeros(capacity, dtype=np.int32)
        self.size = 0
        self.root = self._append(root_state, root_control, -1, root_risk, root_static)

    # -- storage ------------------------------------------------------------

    def _grow(self):
        new_cap = self.capacity * 2
        for name in ("x", "y", "theta", "v", "w", "t", "risk", "static_p"):
            arr = getattr(self, name)
            out = np.zeros(new_cap, dtype=arr.dtype)
            out[: self.size] = arr[: self.size]
            setattr(self, name, out)
        for name, fill in (("depth", 0), ("parent", -1), ("n_children_alive", 0),
                           ("fail_count", 0)):
            arr = getattr(self, name)
            out = np.full(new_cap, fill, dtype=arr.dtype)
            out[: self.size] = arr[: self.size]
            setattr(self, name, out)
        out = np.zeros(new_cap, dtype=bool)
        out[: self.size] = self.alive[: self.size]
        self.alive = out
        self.children.extend([] for _ in range(new_cap - self.capacity))
        self.capacity = new_cap

    def _append(self, state: State, control: Control, parent: int,
                risk: float, static_p: float) -> int:
        if self.size == self.capacity:
            self._grow()
        i = self.size
        self.size += 1
        self.x[i], self.y[i], self.theta[i] = state.x, state.y, state.theta
        self.v[i], self.w[i] = control.v, control.w
        self.fail_count[i] = 0
        self.parent[i] = parent
        if parent >= 0:
            self.depth[i] = self.depth[parent] + 1
            self.children[parent].append(i)
            self.n_children_alive[parent] += 1
        else:
            self.depth[i] = 0
        self.t[i] = self.t_root + self.depth[i] * self.dt
        self.risk[i] = risk
        self.static_p[i] = static_p
        self.alive[i] = True
        return i

    def node_state(self, i: int) -> State:
        return State(float(self.x[i]), float(self.y[i]), float(self.theta[i]))

    def node_control(self, i: int) -> Control:
        return Control(float(self.v[i]), float(self.w[i]))

    def node_count(self) -> int:
        return int(np.count_nonzero(self.alive[: self.size]))

    def alive_ids(self) -> np.ndarray:
        return np.nonzero(self.alive[: self.size])[0]

    def alive_xy(self):
        ids = self.alive_ids()
        return self.x[ids], self.y[ids]

    def nearest_dist(self, qx: float, qy: float) -> float:
        xs, ys = self.alive_xy()
        return float(np.min(np.hypot(xs - qx, ys - qy)))

    # -- growth -------------------------------------------------------------

    def extend(self, target: State, model: RiskModel, limits: ControlLimits,
               w1: float, w2: float, p_max: float, rng: np.random.Generator,
               source: int | None = None):
        """Grow toward target: pick the cheapest existing node (or use the
        forced `source`), roll candidate controls one step, keep the
        risk-admissible candidate nearest target. None when every candidate is
        discarded.

        Nodes whose last EXTEND_FAIL_CAP extension attempts all failed are
        closed until the next prune re-validates the tree, so a node boxed in
        by obstacles cannot monopolize the growth budget."""
        if source is not None:
            k = source
        else:
            ids = self.alive_ids()
            ids = ids[self.fail_count[ids] < EXTEND_FAIL_CAP]
            if len(ids) == 0:
                return None
            costs = motion_cost_array(self.x[ids], self.y[ids], self.theta[ids],
                                      self.v[ids], None, target, w1, w2)
            k = int(ids[int(np.argmin(costs))])
        parent_state = self.node_state(k)
        t_child = float(self.t[k]) + self.dt
        best_id_state = None
        best_d = math.inf
        res = model.grid.resolution
        parent_control = self.node_control(k)
        candidates = reachable_controls(parent_control, limits, rng)
        candidates += crawl_controls(parent_control, limits)
        for u in candidates:
            s2 = propagate(parent_state, u, self.dt)
            ps = model.static_prob(s2.x, s2.y)
            if ps > p_max:
                continue
            if not self._arc_clear(parent_state, u, model, p_max, res):
                continue
            risk = model.node_risk(s2.x, s2.y, t_child, p_static=ps)
            if risk > p_max:
                continue
            d = math.hypot(s2.x - target.x, s2.y - target.y)
            if d < best_d:
                best_d = d
                best_id_state = (s2, u, risk, ps)
        if best_id_state is None:
            self.fail_count[k] += 1
            return None
        self.fail_count[k] = 0
        s2, u, risk, ps = best_id_state
        return self._append(s2, u, k, risk, ps)

    def _arc_clear(self, state: State, control: Control, model: RiskModel,
                   p_max: float, res: float) -> bool:
        """Static check at intermediate arc poses so a step cannot hop a wall."""
        n_sub = int(abs(control.v) * self.dt / res)
        for j in range(1, n_sub + 1):
            s = propagate(state, control, self.dt * j / (n_sub + 1))
            if model.static_prob(s.x, s.y) > p_max:
                return False
        return True

    # -- pruning / re-rooting -------------------------------------------------

    def _kill_subtree(self, node: int) -> int:
        killed = 0
        stack = [node]
        while stack:
            i = stack.pop()
            if not self.alive[i]:
                continue
            self.alive[i] = False
            p = self.parent[i]
            if p >= 0 and self.alive[p]:
                self.n_children_alive[p] -= 1
            killed += 1
            stack.extend(c for c in self.children[i] if self.alive[c])
        return killed

    def _descendants(self, node: int) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        stack = [node]
        while stack:
            i = stack.pop()
            if mask[i] or not self.alive[i]:
                continue
            mask[i] = True
            stack.extend(c for c in self.children[i] if self.alive[c])
        return mask

    def brake(self, node: int, limits: ControlLimits) -> int:
        """The robot stopped in place: zero the node's control and drop the
        child branches whose first control is no longer reachable from rest.
        Returns the number of nodes dropped."""
        self.v[node] = 0.0
        self.w[node] = 0.0
        dropped = 0
        for c in list(self.children[node]):
            if self.alive[c] and (abs(self.v[c]) > limits.a_v or abs(self.w[c]) > limits.a_w):
                dropped += self._kill_subtree(c)
        return dropped

    def rebase(self, new_root: int, new_t_root: float):
        """Make new_root the root and re-time the tree: depths recomputed from
        the new root, timestamps = t_root + depth * dt."""
        self.root = new_root
        self.parent[new_root] = -1
        self.t_root = float(new_t_root)
        stack = [(new_root, 0)]
        while stack:
            i, d = stack.pop()
            self.depth[i] = d
            self.t[i] = self.t_root + d * self.dt
            stack.extend((c, d + 1) for c in self.children[i] if self.alive[c])

    def prune_invalid(self, current: int, new_t_root: float, model: RiskModel,
                      p_max: float) -> tuple[int, int]:
        """Re-root at `current`, drop everything that is not its descendant,
        re-evaluate every surviving node's risk against the refreshed obstacle
        predictions, and cut each subtree whose root exceeds the risk gate.

        Returns (risk_pruned, reroot_pruned) node counts.
        """
        keep = self._descendants(current)
        reroot_pruned = 0
        for i in np.nonzero(self.alive[: self.size] & ~keep)[0]:
            if self.alive[i]:
                self.alive[i] = False
                p = self.parent[i]
                if p >= 0 and self.alive[p]:
                    self.n_children_alive[p] -= 1
                reroot_pruned += 1
        self.rebase(current, new_t_root)
        ids = self.alive_ids()
        self.fail_count[ids] = 0
        moving = model.moving_prob_many(self.x[ids], self.y[ids], self.t[ids])
        self.risk[ids] = self.static_p[ids] + (1.0 - self.static_p[ids]) * moving
        risk_pruned = 0
        bad = ids[(self.risk[ids] > p_max) & (ids != current)]
        for i in bad:
            if self.alive[i]:
                risk_pruned += self._kill_subtree(int(i))
        return risk_pruned, reroot_pruned

    # -- trajectory selection -------------------------------------------------

    def leaf_ids(self) -> np.ndarray:
        ids = self.alive_ids()
        return ids[self.n_children_alive[ids] == 0]

    def path_to_root(self, node: int) -> list[int]:
        path = [node]
        while self.parent[path[-1]] >= 0:
            path.append(int(self.parent[path[-1]]))
        path.reverse()
        return path

    def best_path(self, goal: State, w1: float, w2: float) -> list[int]:
        """Root-to-leaf node chain whose leaf is cheapest w.r.t. the goal;
        ties fall to the lowest cumulative path risk, then the lowest id."""
        leaves = self.leaf_ids()
        costs = motion_cost_array(self.x[leaves], self.y[leaves], self.theta[leaves],
                                  self.v[leaves], None, goal, w1, w2)
        cmin = np.min(costs)
        tied = leaves[costs == cmin]
        if len(tied) > 1:
            best = None
            for leaf in tied:
                path = self.path_to_root(int(leaf))
                key = (float(np.sum(self.risk[path])), int(leaf))
                if best is None or key < best[0]:
                    best = (key, path)
            return best[1]
        return self.path_to_root(int(tied[0]))

    def best_trajectory(self, goal: State, w1: float, w2: float) -> Trajectory:
        path = self.best_path(goal, w1, w2)
        points = [TrajectoryPoint(self.node_state(i), self.node_control(i), float(self.t[i]))
                  for i in path]
        return Trajectory(points, self.dt)

    def touches_goal(self, scenario: Scenario) -> bool:
        ids = self.alive_ids()
        d = np.hypot(self.x[ids] - scenario.goal[0], self.y[ids] - scenario.goal[1])
        return bool(np.any(d < scenario.goal_radius))

    # -- debugging ------------------------------------------------------------

    def dump_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "parent", "x", "y", "theta", "t", "N", "risk"])
            for i in self.alive_ids():
                writer.writerow([int(i), int(self.parent[i]), repr(float(self.x[i])),
                                 repr(float(self.y[i])), repr(float(self.theta[i])),
                                 repr(float(self.t[i])), int(self.depth[i]),
                                 repr(float(self.risk[i]))])
