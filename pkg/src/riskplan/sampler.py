"""Adaptive guided sampling: waypoint-proximity-triggered region refresh,
bias reset and geometric decay, and region-vs-global target draws."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .heuristic import HeuristicRegion, RegionHub, RegionResult, region_sample
from .kinematics import State
from .world import StaticMap

DEFAULT_GAMMA = 0.995
DEFAULT_BIAS_FLOOR = 0.1
# a cycle without growth near the chain is taken as this many failed decay steps
STAGNANT_CYCLE_DECAY_STEPS = 4


def decay_bias(bias: float, gamma: float = DEFAULT_GAMMA,
               bias_floor: float = DEFAULT_BIAS_FLOOR) -> float:
    """One geometric decay step, clamped at the floor."""
    return max(gamma * bias, bias_floor)


def uniform_state(grid: StaticMap, rng: np.random.Generator) -> State:
    """Uniform over the map rectangle with uniform heading."""
    u = rng.random(3)
    return State(u[0] * grid.world_width, u[1] * grid.world_height,
                 -math.pi + 2.0 * math.pi * u[2])


@dataclass
class Waypoints:
    """Cell chain through the heuristic region plus the world positions used
    for proximity checks. Triggers consider every `stride`-th chain cell (the
    final cell always included)."""

    cells: tuple
    positions: np.ndarray
    trigger_indices: tuple

    @classmethod
    def from_cells(cls, cells, grid: StaticMap, stride: int = 1):
        cells = tuple(tuple(c) for c in cells)
        pos = np.array([grid.cell_center(cx, cy) for cx, cy in cells], dtype=np.float64)
        idx = list(range(0, len(cells), max(1, stride)))
        if idx and idx[-1] != len(cells) - 1:
            idx.append(len(cells) - 1)
        return cls(cells, pos, tuple(idx))

    def __len__(self):
        return len(self.cells)


@dataclass
class SamplerStats:
    """Per-sample bookkeeping consumed by benchmarks and acceptance checks."""

    bias_trace: list = field(default_factory=list)
    trigger_samples: list = field(default_factory=list)
    apply_samples: list = field(default_factory=list)  # (sample_index, new_version)
    refresh_requests: int = 0


class AdaptiveSampler:
    """Owns the bias, the consumed-waypoint set, simple trigger bookkeeping,
    and the live region. With `adaptive` off (fixed-region mode) the bias stays
    at 1 and no refreshes are ever requested."""

    def __init__(self, grid: StaticMap, goal_cell, hub: RegionHub, delta: float,
                 gamma: float = DEFAULT_GAMMA, bias_floor: float = DEFAULT_BIAS_FLOOR,
                 waypoint_stride: int = 1, adaptive: bool = True,
                 fixed_bias: float = 0.5, stats: SamplerStats | None = None):
        self.grid = grid
        self.goal_cell = tuple(goal_cell)
        self.hub = hub
        self.delta = float(delta)
        self.gamma = gamma
        self.bias_floor = bias_floor
        self.stride = max(1, int(waypoint_stride))
        self.adaptive = adaptive
        self.stats = stats if stats is not None else SamplerStats()
        self.bias = 1.0 if adaptive else float(fixed_bias)
        self.node_list: list[State] = []
        self.region: HeuristicRegion | None = None
        self.waypoints: Waypoints | None = None
        self.consumed: set[int] = set()
        self.sample_index = 0
        self._grew_this_cycle = False
        self._last_cycle = None

    @property
    def region_version(self) -> int:
        return self.region.version if self.region is not None else 0

    def initialize(self, start: State):
        """Synchronous initial region generation before the first cycle."""
        result = self.hub.run_sync(start)
        self._apply(result, start, initial=True)

    def _apply(self, result: RegionResult, source: State, initial: bool = False):
        version = 1 if initial else self.region.version + 1
        self.region = HeuristicRegion(result.cells, version, source)
        self.waypoints = Waypoints.from_cells(result.waypoint_cells, self.grid, self.stride)
        self.consumed = set()
        # the chain begins where the refresh was requested; its surroundings
        # are already visited and must not re-trigger immediately
        self._consume_near(source, 2.0 * self.delta)
        if not initial:
            self.stats.apply_samples.append((self.sample_index, version))

    def _consume_near(self, around: State, radius: float):
        for idx in self.waypoints.trigger_indices:
            if idx in self.consumed:
                continue
            wx, wy = self.waypoints.positions[idx]
            if math.hypot(around.x - wx, around.y - wy) < radius:
                self.consumed.add(idx)

    def _check_trigger(self, current: State) -> bool:
        """Fire when the robot comes within delta of an unconsumed waypoint;
        the whole approached neighborhood is consumed so refreshes pace with
        robot progress rather than with the sampling rate."""
        if self.waypoints is None or len(self.waypoints) == 0:
            return False
        for idx in self.waypoints.trigger_indices:
            if idx in self.consumed:
                continue
            wx, wy = self.waypoints.positions[idx]
            if math.hypot(current.x - wx, current.y - wy) < self.delta:
                self._consume_near(current, 2.0 * self.delta)
                return True
        return False

    def note_chain_growth(self, x: float, y: float):
        """The tree gained a node; a cycle counts as productive when any such
        node lands near the waypoint chain, and the bias only decays after an
        unproductive cycle."""
        if self.waypoints is None or len(self.waypoints) == 0:
            return
        pos = self.waypoints.positions
        d2 = (pos[:, 0] - x) ** 2 + (pos[:, 1] - y) ** 2
        if float(d2.min()) < self.delta * self.delta:
            self._grew_this_cycle = True

    def sample(self, current: State, rng: np.random.Generator, cycle_idx: int) -> State:
        """Draw the next exploration target.

        Adaptive mode: a first unconsumed waypoint within `delta` of the robot
        consumes its neighborhood, records the robot state, requests a region
        refresh from it, and resets the bias to 1; a completed refresh is
        swapped in before the draw; the draw lands in the region with
        probability `bias`, otherwise anywhere on the map; after every cycle in
        which the tree failed to grow near the waypoint chain the bias decays.
        """
        if self.adaptive:
            if cycle_idx != self._last_cycle:
                if self._last_cycle is not None and not self._grew_this_cycle:
                    # one stagnant cycle is worth a burst of decay steps
                    for _ in range(STAGNANT_CYCLE_DECAY_STEPS):
                        self.bias = decay_bias(self.bias, self.gamma, self.bias_floor)
                self._grew_this_cycle = False
                self._last_cycle = cycle_idx
            if self._check_trigger(current):
                self.node_list.append(current)
                if self.hub.request(self.node_list[-1], cycle_idx):
                    self.stats.refresh_requests += 1
                self.bias = 1.0
                self.stats.trigger_samples.append(self.sample_index)
            result = self.hub.poll(cycle_idx)
            if result is not None:
                self._apply(result, self.node_list[-1] if self.node_list else current)
        bias_used = self.bias
        self.stats.bias_trace.append(bias_used)
        if self.region is not None and len(self.region) > 0 and rng.random() < bias_used:
            out = region_sample(self.region, self.grid, rng)
        else:
            out = uniform_state(self.grid, rng)
        self.sample_index += 1
        return out
