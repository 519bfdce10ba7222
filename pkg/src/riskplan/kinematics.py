"""Unicycle kinematics: states, bounded controls, exact arc propagation, and
the distance-plus-heading transition cost used to rank tree extensions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (theta + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True, slots=True)
class State:
    """Planar pose. theta is normalized to [-pi, pi) on construction."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    def heading(self) -> tuple[float, float]:
        return math.cos(self.theta), math.sin(self.theta)

    def distance_to(self, other: "State") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True, slots=True)
class Control:
    """Linear and angular velocity command held for one timestep."""

    v: float = 0.0
    w: float = 0.0


@dataclass(frozen=True, slots=True)
class ControlLimits:
    """Global velocity bounds, per-step reachability box, and the number of
    candidate child controls drawn per extension. The default v_min of 0 makes
    the robot forward-only (it turns in place rather than reversing)."""

    v_max: float = 1.0
    w_max: float = 1.0
    a_v: float = 0.25
    a_w: float = 1.0
    branching: int = 8
    v_min: float = 0.0

    def __post_init__(self):
        if self.v_max <= 0 or self.w_max <= 0:
            raise ValueError("velocity bounds must be positive")
        if self.v_min > self.v_max or self.v_min < -self.v_max:
            raise ValueError("v_min must lie in [-v_max, v_max]")
        if self.a_v < 0 or self.a_w < 0:
            raise ValueError("per-step changes must be non-negative")
        if self.branching < 1:
            raise ValueError("branching must be >= 1")


def propagate(state: State, control: Control, dt: float) -> State:
    """Integrate the unicycle exactly over dt: a straight segment for w ~ 0,
    otherwise a circular arc of radius v/w."""
    v, w = control.v, control.w
    if abs(w) < 1e-9:
        c, s = math.cos(state.theta), math.sin(state.theta)
        return State(state.x + v * dt * c, state.y + v * dt * s, state.theta)
    r = v / w
    th2 = state.theta + w * dt
    x2 = state.x + r * (math.sin(th2) - math.sin(state.theta))
    y2 = state.y - r * (math.cos(th2) - math.cos(state.theta))
    return State(x2, y2, th2)


def arc_points(state: State, control: Control, dt: float, count: int) -> list[State]:
    """Poses at `count` evenly spaced times in (0, dt], ending at propagate(state, control, dt)."""
    return [propagate(state, control, dt * k / count) for k in range(1, count + 1)]


def control_box(parent: Control, limits: ControlLimits) -> tuple[float, float, float, float]:
    """Reachable one-step control box (lo_v, hi_v, lo_w, hi_w) around parent."""
    lo_v = max(parent.v - limits.a_v, limits.v_min)
    hi_v = min(parent.v + limits.a_v, limits.v_max)
    hi_v = max(hi_v, lo_v)
    lo_w = max(parent.w - limits.a_w, -limits.w_max)
    hi_w = min(parent.w + limits.a_w, limits.w_max)
    return lo_v, hi_v, lo_w, hi_w


def reachable_controls(parent: Control, limits: ControlLimits, rng: np.random.Generator) -> list[Control]:
    """Draw `branching` controls uniformly from the per-step box around the
    parent control, clipped to the global bounds."""
    lo_v, hi_v, lo_w, hi_w = control_box(parent, limits)
    draws = rng.uniform((lo_v, lo_w), (hi_v, hi_w), size=(limits.branching, 2))
    return [Control(float(v), float(w)) for v, w in draws]


def crawl_controls(parent: Control, limits: ControlLimits) -> list[Control]:
    """The slowest, hardest-turning corners of the one-step box. From rest these
    are exact in-place pivots, which lets a robot wedged against an obstacle
    rotate its way out instead of deadlocking."""
    lo_v, _, lo_w, hi_w = control_box(parent, limits)
    return [Control(lo_v, lo_w), Control(lo_v, hi_w)]


def motion_cost(x1: State, v1, x2: State, w1: float = 1.0, w2: float = 0.5) -> float:
    """Effort of transitioning from x1 (moving with velocity vector v1) to x2:
    w1 * straight-line distance + w2 * angle between v1 and the displacement.

    Degenerate inputs: coincident states contribute zero angle; a zero velocity
    falls back to x1's heading so the cost stays continuous at rest.
    """
    dx, dy = x2.x - x1.x, x2.y - x1.y
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return 0.0
    vx, vy = float(v1[0]), float(v1[1])
    nv = math.hypot(vx, vy)
    if nv == 0.0:
        vx, vy = x1.heading()
        nv = 1.0
    cosang = (vx * dx + vy * dy) / (nv * dist)
    angle = math.acos(min(1.0, max(-1.0, cosang)))
    return w1 * dist + w2 * angle


def motion_cost_array(xs, ys, thetas, vs, ws_unused, target: State, w1: float, w2: float):
    """Vectorized motion_cost from many nodes to one target.

    xs/ys/thetas/vs are parallel arrays; a node's velocity vector is
    v * (cos theta, sin theta), replaced by the bare heading when v == 0.
    """
    dx = target.x - xs
    dy = target.y - ys
    dist = np.hypot(dx, dy)
    hx = np.cos(thetas)
    hy = np.sin(thetas)
    sign = np.where(vs < 0, -1.0, 1.0)
    vx = sign * hx
    vy = sign * hy
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = (vx * dx + vy * dy) / dist
    angle = np.arccos(np.clip(cosang, -1.0, 1.0))
    angle = np.where(dist == 0.0, 0.0, angle)
    return w1 * dist + w2 * angle
