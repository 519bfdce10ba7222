"""Heuristic-region generation and sampling.

A region is a set of grid cells believed to contain a start-goal corridor.
Regions come from a pluggable generator: the built-in corridor generator
(shortest grid path on an inflated map, widened by a radius) or an external
model speaking a newline-delimited JSON protocol over subprocess stdio or TCP.
Region requests run asynchronously relative to the planner loop; completed
results are applied atomically at sampling boundaries.
"""
from __future__ import annotations

import base64
import json
import logging
import math
import subprocess
import threading
from dataclasses import dataclass
from functools import lru_cache
from queue import Empty, Queue

import numpy as np

from .errors import EmptyRegion, GeneratorFailure
from .kinematics import State
from .world import StaticMap

log = logging.getLogger("riskplan")

DEFAULT_CLEARANCE_CELLS = 3
DEFAULT_CORRIDOR_RADIUS_CELLS = 10
DEFAULT_MAX_ITER = 5

# Fixed neighbor precedence for path backtracking; shared, documented recipe so
# independent implementations reproduce identical paths.
NEIGHBOR_ORDER = ((-1, 0), (0, -1), (1, 0), (0, 1))


@lru_cache(maxsize=32)
def disc_offsets(radius_cells: int) -> tuple:
    """Integer offsets (dx, dy) with dx^2 + dy^2 <= radius^2."""
    r2 = radius_cells * radius_cells
    out = []
    for dy in range(-radius_cells, radius_cells + 1):
        for dx in range(-radius_cells, radius_cells + 1):
            if dx * dx + dy * dy <= r2:
                out.append((dx, dy))
    return tuple(out)


def inflate_occupancy(occ: np.ndarray, clearance_cells: int) -> np.ndarray:
    """Dilate an occupancy mask by an integer-radius disc (dx^2+dy^2 <= c^2)."""
    occ = occ.astype(bool)
    if clearance_cells <= 0:
        return occ.copy()
    height, width = occ.shape
    ys, xs = np.nonzero(occ)
    out = occ.copy()
    for dx, dy in disc_offsets(clearance_cells):
        nx = xs + dx
        ny = ys + dy
        keep = (nx >= 0) & (nx < width) & (ny >= 0) & (ny < height)
        out[ny[keep], nx[keep]] = True
    return out


def _wavefront(passable: np.ndarray, start_cell) -> np.ndarray:
    """4-connected hop distances from start_cell over a passable mask (-1 unreachable)."""
    height, width = passable.shape
    dist = np.full((height, width), -1, dtype=np.int32)
    sx, sy = start_cell
    if not (0 <= sx < width and 0 <= sy < height) or not passable[sy, sx]:
        return dist
    dist[sy, sx] = 0
    cur = np.zeros((height, width), dtype=bool)
    cur[sy, sx] = True
    d = 0
    while True:
        d += 1
        nxt = np.zeros_like(cur)
        nxt[1:, :] |= cur[:-1, :]
        nxt[:-1, :] |= cur[1:, :]
        nxt[:, 1:] |= cur[:, :-1]
        nxt[:, :-1] |= cur[:, 1:]
        nxt &= passable
        nxt &= dist < 0
        if not nxt.any():
            return dist
        dist[nxt] = d
        cur = nxt


def _backtrack(dist: np.ndarray, goal_cell) -> list[tuple[int, int]]:
    """Walk goal -> start along decreasing distance, taking the first improving
    neighbor in NEIGHBOR_ORDER; returns the start -> goal cell path."""
    height, width = dist.shape
    cx, cy = goal_cell
    d = int(dist[cy, cx])
    path = [(cx, cy)]
    while d > 0:
        for dx, dy in NEIGHBOR_ORDER:
            nx, ny = cx + dx, cy + dy
            if 0 <= nx < width and 0 <= ny < height and dist[ny, nx] == d - 1:
                cx, cy, d = nx, ny, d - 1
                path.append((cx, cy))
                break
        else:  # pragma: no cover - dist fields are gap-free by construction
            raise RuntimeError("broken distance field")
    path.reverse()
    return path


def shortest_grid_path(occ: np.ndarray, start_cell, goal_cell):
    """Deterministic shortest 4-connected path over free cells of an occupancy
    mask, or None. Optimal (unit step); ties broken by the backtrack precedence."""
    passable = ~occ.astype(bool)
    dist = _wavefront(passable, start_cell)
    gx, gy = goal_cell
    if not (0 <= gx < occ.shape[1] and 0 <= gy < occ.shape[0]) or dist[gy, gx] < 0:
        return None
    return _backtrack(dist, goal_cell)


def oracle_corridor(start_cell, goal_cell, grid: StaticMap,
                    clearance_cells: int = DEFAULT_CLEARANCE_CELLS,
                    corridor_radius_cells: int = DEFAULT_CORRIDOR_RADIUS_CELLS) -> frozenset:
    """Deterministic corridor: shortest unit-step path on the map inflated by
    `clearance_cells`, widened to every free cell within `corridor_radius_cells`
    (Euclidean, cell units) of the path. Empty when no path exists."""
    occ = grid.occupancy_grid().astype(bool)
    inflated = inflate_occupancy(occ, clearance_cells)
    path = shortest_grid_path(inflated, start_cell, goal_cell)
    if path is None:
        return frozenset()
    height, width = occ.shape
    mask = np.zeros((height, width), dtype=bool)
    pxs = np.array([c[0] for c in path])
    pys = np.array([c[1] for c in path])
    for dx, dy in disc_offsets(corridor_radius_cells):
        nx = pxs + dx
        ny = pys + dy
        keep = (nx >= 0) & (nx < width) & (ny >= 0) & (ny < height)
        mask[ny[keep], nx[keep]] = True
    mask &= ~occ
    ys, xs = np.nonzero(mask)
    return frozenset(zip(xs.tolist(), ys.tolist()))


def _region_mask(cells, shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    if cells:
        arr = np.asarray(sorted(cells), dtype=np.int64)
        mask[arr[:, 1], arr[:, 0]] = True
    return mask


def _nearest_region_cell(cells, target_cell):
    """Region cell nearest a target cell; ties by lowest (cy, cx)."""
    tx, ty = target_cell
    return min(cells, key=lambda c: ((c[0] - tx) ** 2 + (c[1] - ty) ** 2, c[1], c[0]))


def bfs_waypoints(cells, start_cell, goal_cell, shape):
    """Shortest 4-connected cell path through the region from the region cell
    nearest start_cell to goal_cell, or None when goal_cell is unreachable
    (or missing from the region)."""
    if not cells or tuple(goal_cell) not in cells:
        return None
    entry = _nearest_region_cell(cells, start_cell)
    mask = _region_mask(cells, shape)
    dist = _wavefront(mask, entry)
    gx, gy = goal_cell
    if dist[gy, gx] < 0:
        return None
    return _backtrack(dist, goal_cell)


def bfs_frontier_toward_goal(cells, start_cell, goal_cell, shape):
    """Where a failed region search got stuck: among region cells reachable from
    the entry cell, the one nearest the goal (ties by lowest (cy, cx))."""
    if not cells:
        return tuple(start_cell)
    entry = _nearest_region_cell(cells, start_cell)
    mask = _region_mask(cells, shape)
    dist = _wavefront(mask, entry)
    ys, xs = np.nonzero(dist >= 0)
    gx, gy = goal_cell
    d2 = (xs - gx) ** 2 + (ys - gy) ** 2
    order = np.lexsort((xs, ys, d2))
    k = order[0]
    return int(xs[k]), int(ys[k])


@dataclass(frozen=True)
class HeuristicRegion:
    """Versioned promising-cell set. Versions increase by one per applied update
    within a planning run."""

    cells: frozenset
    version: int
    source_start: State

    def cells_array(self) -> np.ndarray:
        arr = getattr(self, "_cells_array", None)
        if arr is None:
            arr = np.asarray(sorted(self.cells), dtype=np.int64)
            object.__setattr__(self, "_cells_array", arr)
        return arr

    def __len__(self):
        return len(self.cells)


@dataclass(frozen=True)
class RegionResult:
    """Outcome of one generation round: accumulated cells, the waypoint cell
    chain (goal cell alone when no connected chain was found), and whether the
    chain is connected."""

    cells: frozenset
    waypoint_cells: tuple
    connected: bool


def net_infer(start, goal_cell, grid: StaticMap, generator,
              max_iter: int = DEFAULT_MAX_ITER) -> RegionResult:
    """Query the generator until a waypoint chain from `start` to the goal cell
    exists inside the accumulated region, or `max_iter` rounds pass.

    Responses are unioned across rounds; after a failed chain search the next
    query starts from the reachable region cell nearest the goal. On exhaustion
    the result carries the goal cell as the only waypoint.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    start_cell = grid.cell_of(start.x, start.y) if isinstance(start, State) else tuple(start)
    goal_cell = tuple(goal_cell)
    shape = (grid.height, grid.width)
    cells: set = set()
    query = start_cell
    for _ in range(max_iter):
        response = generator.generate(grid, query, goal_cell)
        cells.update(
            c for c in response if grid.in_bounds_cell(int(c[0]), int(c[1]))
        )
        chain = bfs_waypoints(cells, start_cell, goal_cell, shape)
        if chain is not None:
            return RegionResult(frozenset(cells), tuple(chain), True)
        query = bfs_frontier_toward_goal(cells, start_cell, goal_cell, shape)
    return RegionResult(frozenset(cells), (goal_cell,), False)


def region_sample(region: HeuristicRegion, grid: StaticMap, rng: np.random.Generator) -> State:
    """Uniform over region cells, uniform within the chosen cell, heading
    uniform in [-pi, pi)."""
    if len(region.cells) == 0:
        raise EmptyRegion("cannot sample from an empty region")
    arr = region.cells_array()
    idx = int(rng.integers(len(arr)))
    u = rng.random(3)
    cx, cy = arr[idx]
    res = grid.resolution
    return State((cx + u[0]) * res, (cy + u[1]) * res, -math.pi + 2.0 * math.pi * u[2])


# ---------------------------------------------------------------------------
# Region generators


class OracleCorridorGenerator:
    """Built-in deterministic generator reusing the corridor recipe.

    When the inflated map disconnects the query (typical near walls), the
    clearance degrades one cell at a time before giving up, so mid-run region
    refreshes stay useful; the plain corridor operation is unaffected.
    """

    def __init__(self, clearance_cells: int = DEFAULT_CLEARANCE_CELLS,
                 corridor_radius_cells: int = DEFAULT_CORRIDOR_RADIUS_CELLS,
                 degrade_clearance: bool = True):
        self.clearance_cells = clearance_cells
        self.corridor_radius_cells = corridor_radius_cells
        self.degrade_clearance = degrade_clearance

    def generate(self, grid: StaticMap, start_cell, goal_cell) -> frozenset:
        clearance = self.clearance_cells
        while True:
            cells = oracle_corridor(start_cell, goal_cell, grid,
                                    clearance, self.corridor_radius_cells)
            if cells or not self.degrade_clearance or clearance == 0:
                return cells
            clearance -= 1


class ScriptedGenerator:
    """Test double: yields pre-scripted cell sets per call (last one repeats)."""

    def __init__(self, responses):
        self.responses = [frozenset(r) for r in responses]
        self.calls = 0

    def generate(self, grid, start_cell, goal_cell) -> frozenset:
        out = self.responses[min(self.calls, len(self.responses) - 1)]
        self.calls += 1
        return out


# ---------------------------------------------------------------------------
# Wire protocol (newline-delimited JSON over a byte stream)


def encode_region_request(req_id: int, grid: StaticMap, start_cell, goal_cell) -> str:
    payload = base64.b64encode(grid.occupancy_grid().tobytes()).decode("ascii")
    return json.dumps({
        "id": req_id,
        "width": grid.width,
        "height": grid.height,
        "start": [int(start_cell[0]), int(start_cell[1])],
        "goal": [int(goal_cell[0]), int(goal_cell[1])],
        "grid": payload,
    }, separators=(",", ":"))


def parse_region_response(line: str, expect_id: int, grid: StaticMap) -> frozenset:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise GeneratorFailure(f"response is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("id") != expect_id:
        raise GeneratorFailure(f"response id mismatch (expected {expect_id})")
    cells = doc.get("cells")
    if not isinstance(cells, list):
        raise GeneratorFailure("response lacks a cells list")
    out = set()
    for item in cells:
        if (not isinstance(item, (list, tuple)) or len(item) != 2
                or not all(isinstance(v, int) for v in item)):
            raise GeneratorFailure(f"malformed cell entry: {item!r}")
        cx, cy = item
        if not grid.in_bounds_cell(cx, cy):
            raise GeneratorFailure(f"cell out of bounds: {item!r}")
        out.add((cx, cy))
    return frozenset(out)


class _LineReader(threading.Thread):
    def __init__(self, stream):
        super().__init__(daemon=True)
        self.stream = stream
        self.lines: Queue = Queue()
        self.start()

    def run(self):
        try:
            for line in self.stream:
                self.lines.put(line)
        except (OSError, ValueError):
            pass
        self.lines.put(None)

    def get(self, timeout: float):
        try:
            line = self.lines.get(timeout=timeout)
        except Empty:
            raise GeneratorFailure("timed out waiting for generator response")
        if line is None:
            raise GeneratorFailure("generator stream closed")
        return line


class SubprocessTransport:
    """Runs the external model as a child process, one JSON line per message."""

    def __init__(self, command):
        self.proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1,
        )
        self.reader = _LineReader(self.proc.stdout)

    def send_line(self, line: str):
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (OSError, BrokenPipeError, ValueError) as exc:
            raise GeneratorFailure(f"cannot write to generator process: {exc}") from exc

    def recv_line(self, timeout: float) -> str:
        return self.reader.get(timeout)

    def close(self):
        try:
            self.proc.terminate()
            self.proc.wait(timeout=2.0)
        except Exception:
            self.proc.kill()


class TcpTransport:
    """Connects to a model server over TCP, one JSON line per message."""

    def __init__(self, host: str, port: int):
        import socket

        self.sock = socket.create_connection((host, port), timeout=10.0)
        self.wfile = self.sock.makefile("w")
        self.reader = _LineReader(self.sock.makefile("r"))

    def send_line(self, line: str):
        try:
            self.wfile.write(line + "\n")
            self.wfile.flush()
        except OSError as exc:
            raise GeneratorFailure(f"cannot write to generator socket: {exc}") from exc

    def recv_line(self, timeout: float) -> str:
        return self.reader.get(timeout)

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class ExternalModelGenerator:
    """Wire-protocol client: one blocking round trip per generate() call."""

    def __init__(self, transport, response_timeout_s: float = 10.0):
        self.transport = transport
        self.timeout = response_timeout_s
        self._next_id = 0

    def generate(self, grid: StaticMap, start_cell, goal_cell) -> frozenset:
        self._next_id += 1
        req_id = self._next_id
        self.transport.send_line(encode_region_request(req_id, grid, start_cell, goal_cell))
        line = self.transport.recv_line(self.timeout)
        return parse_region_response(line, req_id, grid)

    def close(self):
        self.transport.close()


# ---------------------------------------------------------------------------
# Asynchronous request hub


class RegionHub:
    """At most one region request in flight per planner.

    In-process generators resolve at request time but deliver after a fixed
    number of cycles, which keeps the asynchrony deterministic. External
    generators run in a worker thread; a protocol failure permanently switches
    the hub to the built-in corridor generator ("oracle fallback").
    """

    def __init__(self, grid: StaticMap, goal_cell, generator,
                 max_iter: int = DEFAULT_MAX_ITER, latency_cycles: int = 1,
                 external: bool = False,
                 fallback: OracleCorridorGenerator | None = None):
        self.grid = grid
        self.goal_cell = tuple(goal_cell)
        self.generator = generator
        self.max_iter = max_iter
        self.latency_cycles = latency_cycles
        self.external = external
        self.fallback = fallback or OracleCorridorGenerator()
        self.fell_back = False
        self.requests_issued = 0
        self._pending = None  # (ready_cycle, RegionResult) for in-process mode
        self._thread = None
        self._slot = None  # [RegionResult | Exception] written by worker
        self._pending_start = None

    @property
    def in_flight(self) -> bool:
        if self.external and not self.fell_back:
            return self._thread is not None
        return self._pending is not None

    def request(self, start: State, cycle_idx: int) -> bool:
        """Issue a generation request from `start`; False when one is in flight."""
        if self.in_flight:
            return False
        self.requests_issued += 1
        if self.external and not self.fell_back:
            slot = [None]
            start_cell = self.grid.cell_of(start.x, start.y)

            def work():
                try:
                    slot[0] = net_infer(start_cell, self.goal_cell, self.grid,
                                        self.generator, self.max_iter)
                except Exception as exc:  # surfaced at poll time
                    slot[0] = exc

            self._slot = slot
            self._pending_start = start
            self._thread = threading.Thread(target=work, daemon=True)
            self._thread.start()
        else:
            result = net_infer(start, self.goal_cell, self.grid,
                               self._active_generator(), self.max_iter)
            self._pending = (cycle_idx + self.latency_cycles, result)
        return True

    def poll(self, cycle_idx: int):
        """Completed result ready for application, if any."""
        if self.external and not self.fell_back:
            if self._thread is None or self._thread.is_alive():
                return None
            result = self._slot[0]
            start = self._pending_start
            self._thread = None
            self._slot = None
            self._pending_start = None
            if isinstance(result, Exception):
                log.warning("external region generator failed (%s); "
                            "falling back to the built-in corridor generator", result)
                self.fell_back = True
                return net_infer(start, self.goal_cell, self.grid,
                                 self.fallback, self.max_iter)
            return result
        if self._pending is not None and cycle_idx >= self._pending[0]:
            result = self._pending[1]
            self._pending = None
            return result
        return None

    def _active_generator(self):
        return self.fallback if self.fell_back else self.generator

    def run_sync(self, start: State) -> RegionResult:
        """Synchronous generation (initial region); honors the fallback switch."""
        if self.external and not self.fell_back:
            try:
                return net_infer(start, self.goal_cell, self.grid,
                                 self.generator, self.max_iter)
            except Exception as exc:
                log.warning("external region generator failed (%s); "
                            "falling back to the built-in corridor generator", exc)
                self.fell_back = True
        return net_infer(start, self.goal_cell, self.grid,
                         self._active_generator(), self.max_iter)

    def close(self):
        if hasattr(self.generator, "close"):
            try:
                self.generator.close()
            except Exception:
                pass
