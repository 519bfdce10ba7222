import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskplan.kinematics import (Control, ControlLimits, State, motion_cost,
                                 motion_cost_array, normalize_angle, propagate,
                                 reachable_controls)


def euler_rollout(state, control, dt, substeps):
    """Independent oracle: forward-Euler integration of the unicycle."""
    x, y, th = state.x, state.y, state.theta
    h = dt / substeps
    for _ in range(substeps):
        x += control.v * math.cos(th) * h
        y += control.v * math.sin(th) * h
        th += control.w * h
    return x, y, th


def midpoint_rollout(state, control, dt, substeps):
    """Second-order substep oracle for high-curvature cases."""
    x, y, th = state.x, state.y, state.theta
    h = dt / substeps
    for _ in range(substeps):
        thm = th + control.w * h / 2.0
        x += control.v * math.cos(thm) * h
        y += control.v * math.sin(thm) * h
        th += control.w * h
    return x, y, th


def test_propagate_straight_line():
    s = propagate(State(0, 0, 0), Control(1.0, 0.0), 0.5)
    assert (s.x, s.y, s.theta) == pytest.approx((0.5, 0.0, 0.0))


def test_propagate_pure_rotation():
    s = propagate(State(0, 0, 0), Control(0.0, math.pi / 2), 1.0)
    assert (s.x, s.y) == pytest.approx((0.0, 0.0))
    assert s.theta == pytest.approx(math.pi / 2)


def test_propagate_quarter_arc_matches_substep_integration():
    s = propagate(State(0, 0, 0), Control(math.pi / 2, math.pi / 2), 1.0)
    assert (s.x, s.y, s.theta) == pytest.approx((1.0, 1.0, math.pi / 2))
    ex, ey, _ = midpoint_rollout(State(0, 0, 0), Control(math.pi / 2, math.pi / 2), 1.0, 10_000)
    assert math.hypot(s.x - ex, s.y - ey) < 1e-4


def test_propagate_random_controls_match_euler():
    rng = np.random.default_rng(3)
    for _ in range(25):
        s0 = State(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-3, 3))
        u = Control(rng.uniform(-1, 1), rng.uniform(-1, 1))
        s1 = propagate(s0, u, 0.5)
        ex, ey, _ = euler_rollout(s0, u, 0.5, 10_000)
        assert math.hypot(s1.x - ex, s1.y - ey) < 1e-4


@settings(max_examples=60, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-3, 3),
       st.floats(0.05, 2.0))
def test_propagate_semigroup(v, w, theta, dt):
    s0 = State(0.3, -0.7, theta)
    u = Control(v, w)
    whole = propagate(s0, u, dt)
    halves = propagate(propagate(s0, u, dt / 2), u, dt / 2)
    assert math.hypot(whole.x - halves.x, whole.y - halves.y) < 1e-9
    assert abs(normalize_angle(whole.theta - halves.theta)) < 1e-9


def test_propagate_arc_length_is_v_dt():
    # chord of a circular arc of length |v|*dt and radius v/w
    u = Control(0.8, 0.9)
    dt = 0.7
    s = propagate(State(0, 0, 0.3), u, dt)
    chord = math.hypot(s.x - 0.0, s.y - 0.0)
    r = u.v / u.w
    expected_chord = abs(2.0 * r * math.sin(u.w * dt / 2.0))
    assert chord == pytest.approx(expected_chord, abs=1e-9)
    assert abs(u.w * dt) == pytest.approx(abs(u.v * dt / r), abs=1e-9)


def test_cost_euclidean_term():
    assert motion_cost(State(0, 0, 0), (1.0, 0.0), State(3, 4, 0), 1.0, 0.0) == pytest.approx(5.0)


def test_cost_aligned_and_perpendicular():
    assert motion_cost(State(0, 0, 0), (1.0, 0.0), State(2, 0, 0), 0.0, 1.0) == pytest.approx(0.0)
    assert motion_cost(State(0, 0, 0), (1.0, 0.0), State(0, 1, 0), 0.0, 1.0) == pytest.approx(math.pi / 2)


def test_cost_degenerate_cases():
    # coincident states: zero cost; zero velocity: heading substitutes
    assert motion_cost(State(1, 1, 0.5), (0.0, 0.0), State(1, 1, 0), 1.0, 1.0) == 0.0
    c = motion_cost(State(0, 0, math.pi / 2), (0.0, 0.0), State(0, 2, 0), 0.0, 1.0)
    assert c == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5),
       st.floats(-1, 1), st.floats(-1, 1), st.floats(-10, 10), st.floats(-10, 10))
def test_cost_translation_invariant(x1, y1, x2, y2, vx, vy, shift_x, shift_y):
    # well-separated states only: float cancellation at denormal separations
    # legitimately breaks exact invariance
    if math.hypot(x2 - x1, y2 - y1) < 1e-6:
        return
    a = motion_cost(State(x1, y1, 0), (vx, vy), State(x2, y2, 0))
    b = motion_cost(State(x1 + shift_x, y1 + shift_y, 0), (vx, vy),
                    State(x2 + shift_x, y2 + shift_y, 0))
    assert a == pytest.approx(b, rel=1e-6, abs=1e-6)
    assert a >= 0.0


def test_cost_angular_term_bounded():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x1 = State(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3))
        x2 = State(rng.uniform(-3, 3), rng.uniform(-3, 3), 0)
        ang = motion_cost(x1, (rng.uniform(-1, 1), rng.uniform(-1, 1)), x2, 0.0, 1.0)
        assert 0.0 <= ang <= math.pi + 1e-12


def test_cost_array_matches_scalar():
    rng = np.random.default_rng(1)
    n = 50
    xs = rng.uniform(-3, 3, n)
    ys = rng.uniform(-3, 3, n)
    thetas = rng.uniform(-3, 3, n)
    vs = rng.uniform(-1, 1, n)
    target = State(0.5, -0.5, 0)
    vec = motion_cost_array(xs, ys, thetas, vs, None, target, 1.0, 0.5)
    for i in range(n):
        v1 = (vs[i] * math.cos(thetas[i]), vs[i] * math.sin(thetas[i]))
        want = motion_cost(State(xs[i], ys[i], thetas[i]), v1, target, 1.0, 0.5)
        assert vec[i] == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_reachable_controls_degenerate_box():
    limits = ControlLimits(v_max=1, w_max=1, a_v=0.0, a_w=0.0, branching=5)
    out = reachable_controls(Control(0.4, -0.2), limits, np.random.default_rng(0))
    assert all(c == Control(0.4, -0.2) for c in out)


def test_reachable_controls_clamped_at_bounds():
    limits = ControlLimits(v_max=1, w_max=1, a_v=0.5, a_w=0.5, branching=200)
    out = reachable_controls(Control(1.0, 0.0), limits, np.random.default_rng(1))
    assert all(c.v <= 1.0 + 1e-12 for c in out)
    assert all(abs(c.w) <= 0.5 + 1e-12 for c in out)


def test_reachable_controls_box_statistics():
    limits = ControlLimits(v_max=1, w_max=1, a_v=0.25, a_w=0.5, branching=1000)
    parent = Control(0.3, 0.1)  # box [0.05, 0.55] x [-0.4, 0.6], no clamping
    out = reachable_controls(parent, limits, np.random.default_rng(7))
    vs = np.array([c.v for c in out])
    ws = np.array([c.w for c in out])
    # uniform box: mean within 3 sigma of the center
    for vals, center, width in ((vs, 0.3, 0.5), (ws, 0.1, 1.0)):
        sigma = width / math.sqrt(12.0) / math.sqrt(len(vals))
        assert abs(vals.mean() - center) < 3 * sigma


def test_reachable_controls_forward_only_default():
    limits = ControlLimits(branching=300)
    out = reachable_controls(Control(0.0, 0.0), limits, np.random.default_rng(2))
    assert all(c.v >= 0.0 for c in out)


def test_reachable_controls_deterministic():
    limits = ControlLimits(branching=16)
    a = reachable_controls(Control(0.1, 0.1), limits, np.random.default_rng(42))
    b = reachable_controls(Control(0.1, 0.1), limits, np.random.default_rng(42))
    assert a == b


def test_state_normalizes_theta():
    assert State(0, 0, math.pi).theta == pytest.approx(-math.pi)
    assert State(0, 0, 3 * math.pi + 0.25).theta == pytest.approx(-math.pi + 0.25)
