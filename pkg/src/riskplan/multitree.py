"""Multi-directional search: a pool of kinematics-free space trees seeded at
the goal and spawned at far-away samples. Subtrees grow by straight marches,
merge when they come within a radius of each other, and hand their nodes to
the time tree as guidance targets after a meet."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .kinematics import State
from .world import StaticMap

ROOT_TREE = "root"
_MERGE_PAIR_LIMIT = 64


def segment_free(grid: StaticMap, x0: float, y0: float, x1: float, y1: float) -> bool:
    """Straight segment stays in statically free cells (clearance 0).
    Sampled at one third of the cell size; endpoints included."""
    res = grid.resolution
    dist = math.hypot(x1 - x0, y1 - y0)
    n = max(2, int(dist / (res / 3.0)) + 2)
    ts = np.linspace(0.0, 1.0, n)
    xs = x0 + ts * (x1 - x0)
    ys = y0 + ts * (y1 - y0)
    cxs = np.floor(xs / res).astype(np.int64)
    cys = np.floor(ys / res).astype(np.int64)
    if (cxs < 0).any() or (cys < 0).any() or (cxs >= grid.width).any() or (cys >= grid.height).any():
        return False
    return not bool((grid.cells[cys, cxs] >= 0.5).any())


@dataclass
class SubTreeParams:
    rho: float
    d_meet: float
    step_len: float
    spawn_enabled: bool = True


class SubTreeSet:
    """All subtree nodes live in one growable pool; each node carries the
    canonical label of its tree, so merges are label rewrites and distance
    queries are single vectorized passes."""

    def __init__(self, grid: StaticMap, goal: State, goal_radius: float,
                 params: SubTreeParams, capacity: int = 256):
        self.grid = grid
        self.goal = goal
        self.goal_radius = float(goal_radius)
        self.params = params
        self.capacity = capacity
        self.xs = np.zeros(capacity)
        self.ys = np.zeros(capacity)
        self.thetas = np.zeros(capacity)
        self.parents = np.full(capacity, -1, dtype=np.int64)
        self.canon = np.zeros(capacity, dtype=np.int64)
        self.consumed = np.zeros(capacity, dtype=bool)
        self.pool_min_root = np.full(capacity, np.inf)
        self.n = 0
        self.next_label = 1
        self.labels: set[int] = set()
        self.label_min_root: dict[int, float] = {}
        self.label_unconsumed: dict[int, int] = {}
        self.merges = 0
        self.spawns = 0
        self._root_x = np.zeros(0)
        self._root_y = np.zeros(0)
        self._root_extra: list[tuple[float, float]] = []
        self.goal_label = self._new_tree(goal.x, goal.y, goal.theta)
        self.goal_node = 0

    # -- storage --------------------------------------------------------------

    def _grow(self):
        new_cap = self.capacity * 2
        for name in ("xs", "ys", "thetas", "pool_min_root"):
            arr = getattr(self, name)
            out = np.full(new_cap, np.inf) if name == "pool_min_root" else np.zeros(new_cap)
            out[: self.n] = arr[: self.n]
            setattr(self, name, out)
        for name, fill, dtype in (("parents", -1, np.int64), ("canon", 0, np.int64)):
            arr = getattr(self, name)
            out = np.full(new_cap, fill, dtype=dtype)
            out[: self.n] = arr[: self.n]
            setattr(self, name, out)
        out = np.zeros(new_cap, dtype=bool)
        out[: self.n] = self.consumed[: self.n]
        self.consumed = out
        self.capacity = new_cap

    def _append(self, label: int, x: float, y: float, theta: float, parent: int) -> int:
        if self.n == self.capacity:
            self._grow()
        i = self.n
        self.n += 1
        self.xs[i], self.ys[i], self.thetas[i] = x, y, theta
        self.parents[i] = parent
        self.canon[i] = label
        self.consumed[i] = False
        self.pool_min_root[i] = self._dist_to_root(x, y)
        self.label_unconsumed[label] = self.label_unconsumed.get(label, 0) + 1
        if self.pool_min_root[i] < self.label_min_root.get(label, np.inf):
            self.label_min_root[label] = float(self.pool_min_root[i])
        return i

    def _new_tree(self, x: float, y: float, theta: float) -> int:
        label = self.next_label
        self.next_label += 1
        self.labels.add(label)
        self.label_min_root[label] = np.inf
        self._append(label, x, y, theta, -1)
        return label

    def tree_count(self) -> int:
        return len(self.labels)

    def node_count(self) -> int:
        return self.n

    def tree_nodes(self, label: int) -> np.ndarray:
        return np.nonzero(self.canon[: self.n] == label)[0]

    def node_state(self, i: int) -> State:
        return State(float(self.xs[i]), float(self.ys[i]), float(self.thetas[i]))

    def has_unconsumed(self, label: int) -> bool:
        return self.label_unconsumed.get(label, 0) > 0

    # -- distances to the root tree -------------------------------------------

    def _dist_to_root(self, x: float, y: float) -> float:
        best = np.inf
        if len(self._root_x):
            best = float(np.min(np.hypot(self._root_x - x, self._root_y - y)))
        for rx, ry in self._root_extra:
            best = min(best, math.hypot(rx - x, ry - y))
        return best

    def refresh_root_distances(self, root_tree):
        """Rebuild cached subtree-to-root distances after the root tree pruned."""
        self._root_x, self._root_y = root_tree.alive_xy()
        self._root_extra = []
        if self.n == 0:
            return
        xs = self.xs[: self.n]
        ys = self.ys[: self.n]
        best = np.full(self.n, np.inf)
        for lo in range(0, len(self._root_x), 512):
            rx = self._root_x[lo:lo + 512]
            ry = self._root_y[lo:lo + 512]
            d = np.hypot(xs[:, None] - rx[None, :], ys[:, None] - ry[None, :])
            np.minimum(best, d.min(axis=1), out=best)
        self.pool_min_root[: self.n] = best
        self.label_min_root = {label: np.inf for label in self.labels}
        for label in self.labels:
            mask = self.canon[: self.n] == label
            if mask.any():
                self.label_min_root[label] = float(best[mask].min())

    def note_root_insert(self, x: float, y: float):
        """A node was added to the root tree; tighten cached distances."""
        self._root_extra.append((x, y))
        if self.n == 0:
            return
        d = np.hypot(self.xs[: self.n] - x, self.ys[: self.n] - y)
        improved = d < self.pool_min_root[: self.n]
        if not improved.any():
            return
        self.pool_min_root[: self.n] = np.minimum(self.pool_min_root[: self.n], d)
        for label in np.unique(self.canon[: self.n][improved]):
            label = int(label)
            dmin = float(d[improved & (self.canon[: self.n] == label)].min())
            if dmin < self.label_min_root.get(label, np.inf):
                self.label_min_root[label] = dmin

    def meet(self, exclude=frozenset()):
        """Lowest-labelled subtree within the meet radius of the root tree."""
        best = None
        for label in self.labels:
            if label in exclude:
                continue
            if self.label_min_root.get(label, np.inf) < self.params.d_meet:
                if best is None or label < best:
                    best = label
        return best

    def nearest_to_root(self, label: int) -> int:
        """Pool index of this tree's node nearest the root tree (ties: lowest index)."""
        idx = self.tree_nodes(label)
        return int(idx[int(np.argmin(self.pool_min_root[idx]))])

    # -- growth ---------------------------------------------------------------

    def _march(self, i: int, qx: float, qy: float):
        """March from node i straight toward (qx, qy) in step_len increments,
        stopping at the first blocked sub-segment; the farthest free point
        becomes one new node."""
        x0, y0 = float(self.xs[i]), float(self.ys[i])
        total = math.hypot(qx - x0, qy - y0)
        if total < 1e-12:
            return None
        ux, uy = (qx - x0) / total, (qy - y0) / total
        step = self.params.step_len
        reached = 0.0
        k = 1
        while reached < total - 1e-12:
            s = min(k * step, total)
            if segment_free(self.grid, x0 + ux * reached, y0 + uy * reached,
                            x0 + ux * s, y0 + uy * s):
                reached = s
                k += 1
            else:
                break
        if reached <= 1e-12:
            return None
        label = int(self.canon[i])
        j = self._append(label, x0 + ux * reached, y0 + uy * reached,
                         math.atan2(uy, ux), i)
        self._sweep_merges(j)
        return j

    def _reroot_tree_at(self, i: int):
        """Reverse parent links from node i up to its tree root."""
        chain = [i]
        while self.parents[chain[-1]] >= 0:
            chain.append(int(self.parents[chain[-1]]))
        for child, parent in zip(chain, chain[1:]):
            self.parents[parent] = child
        self.parents[i] = -1

    def _merge_pair(self, absorbed: int, survivor: int) -> bool:
        """Merge tree `absorbed` into `survivor` through the closest node pair
        that a statically free straight edge can connect. False when none of
        the nearest pairs connect."""
        ia = self.tree_nodes(absorbed)
        ib = self.tree_nodes(survivor)
        d = np.hypot(self.xs[ia][:, None] - self.xs[ib][None, :],
                     self.ys[ia][:, None] - self.ys[ib][None, :])
        flat = d.ravel()
        take = min(_MERGE_PAIR_LIMIT, flat.size)
        cand = np.argpartition(flat, take - 1)[:take]
        cand = cand[np.lexsort((cand, flat[cand]))]
        for c in cand:
            a = int(ia[c // len(ib)])
            b = int(ib[c % len(ib)])
            if segment_free(self.grid, self.xs[a], self.ys[a], self.xs[b], self.ys[b]):
                self._reroot_tree_at(a)
                self.parents[a] = b
                self.canon[: self.n][self.canon[: self.n] == absorbed] = survivor
                self.label_unconsumed[survivor] = (self.label_unconsumed.get(survivor, 0)
                                                   + self.label_unconsumed.pop(absorbed, 0))
                self.label_min_root[survivor] = min(self.label_min_root.get(survivor, np.inf),
                                                    self.label_min_root.pop(absorbed, np.inf))
                self.labels.discard(absorbed)
                self.merges += 1
                return True
        return False

    def _merge_group(self, group) -> int:
        """Merge a set of labels; the goal-bearing tree always survives,
        otherwise the lowest label. Pairs no free edge can connect stay apart."""
        group = sorted(set(group))
        survivor = self.goal_label if self.goal_label in group else group[0]
        for label in group:
            if label != survivor:
                self._merge_pair(label, survivor)
        return survivor

    def _sweep_merges(self, new_idx: int):
        """Keep the pairwise separation invariant: any tree that the new node
        brought within rho gets merged."""
        label = int(self.canon[new_idx])
        d = np.hypot(self.xs[: self.n] - self.xs[new_idx],
                     self.ys[: self.n] - self.ys[new_idx])
        close = np.unique(self.canon[: self.n][(d < self.params.rho)])
        close = [int(l) for l in close if int(l) != label]
        if close:
            self._merge_group(close + [label])

    def label_dists_to(self, qx: float, qy: float) -> dict[int, float]:
        d = np.hypot(self.xs[: self.n] - qx, self.ys[: self.n] - qy)
        out = np.full(self.next_label, np.inf)
        np.minimum.at(out, self.canon[: self.n], d)
        return {label: float(out[label]) for label in self.labels}

    def multi_search(self, q: State) -> int | None:
        """Dispatch one sample: spawn a new tree at a far free sample, extend
        the single nearby tree toward it, or merge multiple nearby trees first.
        Returns the pool index of the node added, if any."""
        dists = self.label_dists_to(q.x, q.y)
        near = sorted(label for label, d in dists.items() if d < self.params.rho)
        if not near:
            if not self.params.spawn_enabled:
                return None
            if self.grid.point_occupied(q.x, q.y):
                return None
            label = self._new_tree(q.x, q.y, q.theta)
            self.spawns += 1
            j = int(self.tree_nodes(label)[0])
            self._sweep_merges(j)
            return j
        if len(near) == 1:
            label = near[0]
        else:
            label = self._merge_group(near)
        idx = self.tree_nodes(label)
        d = np.hypot(self.xs[idx] - q.x, self.ys[idx] - q.y)
        return self._march(int(idx[int(np.argmin(d))]), q.x, q.y)

    # -- guidance ---------------------------------------------------------------

    def _guidance_chain(self, label: int) -> list[int]:
        """Tree path from the node nearest the root tree up to this tree's own
        root, skipping already-consumed nodes (the goal node is never skipped)."""
        node = self.nearest_to_root(label)
        chain = [node]
        while self.parents[chain[-1]] >= 0:
            chain.append(int(self.parents[chain[-1]]))
        out = []
        for i in chain:
            if not self.consumed[i] or i == self.goal_node:
                out.append(i)
        return out

    def _consume(self, i: int):
        if not self.consumed[i]:
            self.consumed[i] = True
            self.label_unconsumed[int(self.canon[i])] -= 1

    def subtree_sample(self, label: int, extend_fn, eps_guid: float, omega: int,
                       max_attempts: int | None = None):
        """Use a met subtree to pull the root tree along.

        Goal-bearing tree: walk the chain from the meeting side toward the goal;
        each guidance node gets repeated extensions until one lands within
        eps_guid (reaching the goal node returns "reached") or omega attempts
        fail, after which the node is consumed. Other trees: one extension per
        node, consumed immediately; "exhausted" when the list empties.

        extend_fn(target_state) -> (x, y) of the inserted node or None.
        Returns (outcome, attempts): outcome in {"reached", "exhausted", "budget"}.
        """
        attempts = 0
        if label == self.goal_label:
            for g in self._guidance_chain(label):
                gx, gy = float(self.xs[g]), float(self.ys[g])
                count = 0
                while True:
                    if count >= omega:
                        if g != self.goal_node:
                            self._consume(g)
                        break
                    if max_attempts is not None and attempts >= max_attempts:
                        return "budget", attempts
                    new = extend_fn(self.node_state(g))
                    attempts += 1
                    if new is not None and math.hypot(new[0] - gx, new[1] - gy) < eps_guid:
                        if g == self.goal_node:
                            return "reached", attempts
                        self._consume(g)
                        break
                    count += 1
            return "exhausted", attempts
        for g in [int(i) for i in self.tree_nodes(label) if not self.consumed[i]]:
            if max_attempts is not None and attempts >= max_attempts:
                return "budget", attempts
            new = extend_fn(self.node_state(g))
            attempts += 1
            self._consume(g)
            if new is not None and math.hypot(new[0] - self.goal.x, new[1] - self.goal.y) < self.goal_radius:
                return "reached", attempts
        return "exhausted", attempts

    # -- debugging ----------------------------------------------------------------

    def dump_csv(self, path, label: int):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "parent", "x", "y", "theta"])
            for i in self.tree_nodes(label):
                writer.writerow([int(i), int(self.parents[i]), repr(float(self.xs[i])),
                                 repr(float(self.ys[i])), repr(float(self.thetas[i]))])


def find_closest_tree(root_tree, subtrees: SubTreeSet | None, q: State):
    """Which tree's nearest node is globally nearest to q: ROOT_TREE or a
    subtree label. The root tree wins ties; subtree ties go to the lowest label."""
    d_root = root_tree.nearest_dist(q.x, q.y)
    if subtrees is None or subtrees.n == 0:
        return ROOT_TREE
    dists = subtrees.label_dists_to(q.x, q.y)
    label, d_sub = min(dists.items(), key=lambda kv: (kv[1], kv[0]))
    if d_root <= d_sub:
        return ROOT_TREE
    return label


def meet(root_tree, subtrees: SubTreeSet):
    """One-shot meet query: refreshes cached distances, then reports the first
    subtree within the meet radius (None otherwise)."""
    subtrees.refresh_root_distances(root_tree)
    return subtrees.meet()
