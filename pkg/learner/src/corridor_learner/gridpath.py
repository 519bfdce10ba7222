"""Grid-path primitives used to label training samples.

The label recipe is pinned and fully deterministic so labels can be reproduced
exactly by any independent implementation:

  * obstacle inflation: a cell is blocked when any occupied cell lies within
    an integer Euclidean radius (dx^2 + dy^2 <= clearance^2);
  * shortest path: 4-connected unit-step breadth-first distances, path read
    back from the goal taking the first neighbor in ((-1,0),(0,-1),(1,0),(0,1))
    order whose distance is one less, then reversed;
  * corridor: every free cell whose squared integer distance to some path
    cell is <= radius^2.
"""
from __future__ import annotations

from collections import deque

import numpy as np

BACKTRACK_ORDER = ((-1, 0), (0, -1), (1, 0), (0, 1))


def disc_offsets(radius: int) -> list[tuple[int, int]]:
    out = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dx * dx + dy * dy <= radius * radius:
                out.append((dx, dy))
    return out


def inflate(occ: np.ndarray, clearance: int) -> np.ndarray:
    occ = occ.astype(bool)
    if clearance <= 0:
        return occ.copy()
    height, width = occ.shape
    out = occ.copy()
    ys, xs = np.nonzero(occ)
    for dx, dy in disc_offsets(clearance):
        nx = xs + dx
        ny = ys + dy
        ok = (nx >= 0) & (nx < width) & (ny >= 0) & (ny < height)
        out[ny[ok], nx[ok]] = True
    return out


def bfs_distances(occ: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """Hop counts from start over free cells; -1 where unreachable."""
    height, width = occ.shape
    dist = np.full((height, width), -1, dtype=np.int32)
    sx, sy = start
    if not (0 <= sx < width and 0 <= sy < height) or occ[sy, sx]:
        return dist
    dist[sy, sx] = 0
    queue = deque([(sx, sy)])
    while queue:
        x, y = queue.popleft()
        d = dist[y, x] + 1
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < width and 0 <= ny < height and not occ[ny, nx] and dist[ny, nx] < 0:
                dist[ny, nx] = d
                queue.append((nx, ny))
    return dist


def shortest_path(occ: np.ndarray, start: tuple[int, int], goal: tuple[int, int]):
    """Deterministic optimal 4-connected path over free cells, or None."""
    height, width = occ.shape
    gx, gy = goal
    if not (0 <= gx < width and 0 <= gy < height):
        return None
    dist = bfs_distances(occ, start)
    if dist[gy, gx] < 0:
        return None
    path = [(gx, gy)]
    x, y = gx, gy
    d = int(dist[gy, gx])
    while d > 0:
        for dx, dy in BACKTRACK_ORDER:
            nx, ny = x + dx, y + dy
            if 0 <= nx < width and 0 <= ny < height and dist[ny, nx] == d - 1:
                x, y, d = nx, ny, d - 1
                path.append((x, y))
                break
    path.reverse()
    return path


def corridor_cells(occ: np.ndarray, path, radius: int) -> set[tuple[int, int]]:
    """Free cells within `radius` (Euclidean, cell units) of the path."""
    height, width = occ.shape
    out = set()
    offsets = disc_offsets(radius)
    occ = occ.astype(bool)
    for px, py in path:
        for dx, dy in offsets:
            nx, ny = px + dx, py + dy
            if 0 <= nx < width and 0 <= ny < height and not occ[ny, nx]:
                out.add((nx, ny))
    return out


def label_corridor(occ: np.ndarray, start: tuple[int, int], goal: tuple[int, int],
                   clearance: int = 3, radius: int = 10):
    """Full label recipe: path on the inflated grid, corridor on the raw grid.
    Returns (path, corridor set); (None, empty set) when no path exists."""
    blocked = inflate(occ, clearance)
    path = shortest_path(blocked, start, goal)
    if path is None:
        return None, set()
    return path, corridor_cells(occ, path, radius)
