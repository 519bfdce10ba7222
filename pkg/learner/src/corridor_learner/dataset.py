"""Training data: random occupancy grids, point clouds sampled from free
space, and per-point corridor labels.

Point-cloud encoding (recorded in the archive index so consumers stay
encoding-agnostic): each sample holds exactly N_POINTS cell-coordinate points
drawn uniformly from free cells without replacement; the model input features
per point are [x/size, y/size, dist_to_start/size, dist_to_goal/size]; the
label is 1 when the point's cell lies in the corridor of the sample's query.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gridpath import label_corridor

N_POINTS = 2048
CLEARANCE = 3
CORRIDOR_RADIUS = 10

ENCODING_NOTE = (
    "points are free-space cell coordinates sampled uniformly without "
    "replacement; features per point: [x/size, y/size, d_start/size, "
    "d_goal/size]; label 1 iff the cell is within the corridor"
)


@dataclass
class TrainingSample:
    grid: np.ndarray       # (H, W) uint8, 1 = occupied
    start: tuple[int, int]
    goal: tuple[int, int]
    points: np.ndarray     # (N_POINTS, 2) int32 cell coordinates
    labels: np.ndarray     # (N_POINTS,) uint8


def random_grid(size: int, rng: np.random.Generator) -> np.ndarray:
    """Random layout of rectangles and discs, roughly one fifth occupied."""
    occ = np.zeros((size, size), dtype=np.uint8)
    n_rect = int(rng.integers(3, 7))
    n_disc = int(rng.integers(2, 6))
    for _ in range(n_rect):
        w = int(rng.integers(size // 10, size // 4))
        h = int(rng.integers(size // 10, size // 4))
        x = int(rng.integers(0, size - w))
        y = int(rng.integers(0, size - h))
        occ[y:y + h, x:x + w] = 1
    gx, gy = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5)
    for _ in range(n_disc):
        r = int(rng.integers(max(2, size // 20), max(3, size // 8)))
        cx = float(rng.uniform(r, size - r))
        cy = float(rng.uniform(r, size - r))
        occ[(gx - cx) ** 2 + (gy - cy) ** 2 <= r * r] = 1
    return occ


def _pick_endpoints(occ: np.ndarray, rng: np.random.Generator, min_sep: float):
    free_y, free_x = np.nonzero(occ == 0)
    if len(free_x) < N_POINTS:
        return None
    for _ in range(50):
        i, j = rng.integers(0, len(free_x), size=2)
        sx, sy = int(free_x[i]), int(free_y[i])
        gx, gy = int(free_x[j]), int(free_y[j])
        if math.hypot(sx - gx, sy - gy) >= min_sep:
            return (sx, sy), (gx, gy)
    return None


def make_sample(size: int, rng: np.random.Generator) -> TrainingSample:
    """One labelled sample; layouts without a feasible query are regenerated."""
    while True:
        occ = random_grid(size, rng)
        picked = _pick_endpoints(occ, rng, min_sep=0.5 * size)
        if picked is None:
            continue
        start, goal = picked
        path, corridor = label_corridor(occ, start, goal, CLEARANCE, CORRIDOR_RADIUS)
        if path is None:
            continue
        free_y, free_x = np.nonzero(occ == 0)
        idx = rng.choice(len(free_x), size=N_POINTS, replace=False)
        points = np.stack([free_x[idx], free_y[idx]], axis=1).astype(np.int32)
        labels = np.fromiter(((int(x), int(y)) in corridor for x, y in points),
                             dtype=np.uint8, count=N_POINTS)
        return TrainingSample(occ, start, goal, points, labels)


def sample_features(sample_size: int, points: np.ndarray, start, goal) -> np.ndarray:
    """Per-point model input features; see ENCODING_NOTE."""
    pts = points.astype(np.float64)
    d_start = np.hypot(pts[:, 0] - start[0], pts[:, 1] - start[1])
    d_goal = np.hypot(pts[:, 0] - goal[0], pts[:, 1] - goal[1])
    feats = np.stack([pts[:, 0], pts[:, 1], d_start, d_goal], axis=1)
    return (feats / sample_size).astype(np.float32)


def _sample_digest(sample: TrainingSample) -> str:
    h = hashlib.sha256()
    for arr in (sample.grid, np.asarray(sample.start), np.asarray(sample.goal),
                sample.points, sample.labels):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def gen_dataset(n: int, size_cells: int, seed: int, out_dir) -> dict:
    """Write n samples plus an index; returns the index document.

    The index records a content hash per sample and a dataset hash over them,
    so regeneration with the same seed is verifiable byte-for-byte.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for k in range(n):
        sample = make_sample(size_cells, rng)
        name = f"sample_{k:05d}.npz"
        np.savez_compressed(out_dir / name, grid=sample.grid,
                            start=np.asarray(sample.start, dtype=np.int32),
                            goal=np.asarray(sample.goal, dtype=np.int32),
                            points=sample.points, labels=sample.labels)
        entries.append({"file": name, "sha256": _sample_digest(sample),
                        "positive_fraction": float(sample.labels.mean())})
    digest = hashlib.sha256("".join(e["sha256"] for e in entries).encode()).hexdigest()
    index = {
        "n": n,
        "size_cells": size_cells,
        "seed": seed,
        "n_points": N_POINTS,
        "clearance_cells": CLEARANCE,
        "corridor_radius_cells": CORRIDOR_RADIUS,
        "encoding": ENCODING_NOTE,
        "dataset_sha256": digest,
        "samples": entries,
    }
    (out_dir / "index.json").write_text(json.dumps(index, indent=1) + "\n")
    return index


def load_dataset(path) -> list[TrainingSample]:
    path = Path(path)
    index = json.loads((path / "index.json").read_text())
    out = []
    for entry in index["samples"]:
        data = np.load(path / entry["file"])
        out.append(TrainingSample(
            grid=data["grid"], start=tuple(int(v) for v in data["start"]),
            goal=tuple(int(v) for v in data["goal"]),
            points=data["points"], labels=data["labels"]))
    return out
