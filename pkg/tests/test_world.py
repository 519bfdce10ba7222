import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskplan.errors import NoObservation, ParseError, ValidationError
from riskplan.kinematics import State
from riskplan.world import (DynamicObstacle, RiskModel, Scenario, StaticMap,
                            collision_prob, combine_moving, compose_risk,
                            load_map, load_scenario, load_trajectories,
                            moving_collision_prob, per_obstacle_risk,
                            predict_position, save_map, save_trajectories,
                            static_collision_prob)

RES = 0.1


def empty_map(n=10, res=RES):
    return StaticMap(np.zeros((n, n)), res)


def obstacle(samples, radius=0.3, observed=math.inf, oid="o1"):
    ts, xs, ys = zip(*samples)
    return DynamicObstacle(obstacle_id=oid, radius=radius, times=np.array(ts),
                           xs=np.array(xs), ys=np.array(ys), observed_up_to=observed)


# -- static risk -------------------------------------------------------------


def test_static_empty_map_is_free():
    grid = empty_map()
    assert static_collision_prob(grid, (0.5, 0.5), 0.1) == 0.0


def test_static_occupied_cell_hits():
    cells = np.zeros((10, 10))
    cells[4, 6] = 1.0
    grid = StaticMap(cells, RES)
    assert static_collision_prob(grid, (0.65, 0.45), 0.02) == 1.0


def test_static_disc_straddling_occupied_and_free():
    cells = np.zeros((10, 10))
    cells[5, 5] = 1.0
    grid = StaticMap(cells, RES)
    # disc centered in the free neighbor cell, radius reaching into (5, 5)
    assert static_collision_prob(grid, (0.45, 0.55), 0.08) == 1.0


def test_static_off_map_is_occupied():
    grid = empty_map()
    assert static_collision_prob(grid, (0.05, 0.5), 0.1) == 1.0
    assert static_collision_prob(grid, (2.0, 0.5), 0.1) == 1.0


def brute_force_static(grid, px, py, r, points=400):
    """Independent oracle: dense point sampling of the disc."""
    best = 0.0
    for ang in np.linspace(0, 2 * math.pi, points, endpoint=False):
        for frac in np.linspace(0, 1, 40):
            x = px + frac * r * math.cos(ang)
            y = py + frac * r * math.sin(ang)
            if not (0 <= x <= grid.world_width and 0 <= y <= grid.world_height):
                return 1.0
            cx = min(grid.width - 1, int(x // grid.resolution))
            cy = min(grid.height - 1, int(y // grid.resolution))
            best = max(best, grid.cells[cy, cx])
    return best


def test_static_matches_point_sampling_oracle():
    rng = np.random.default_rng(5)
    cells = (rng.random((10, 10)) < 0.2).astype(float)
    grid = StaticMap(cells, RES)
    for _ in range(50):
        px, py = rng.uniform(0.15, 0.85, 2)
        r = rng.uniform(0.02, 0.12)
        got = static_collision_prob(grid, (px, py), r)
        want = brute_force_static(grid, px, py, r)
        # point sampling can only under-detect boundary grazing
        assert got >= want - 1e-12
        if got != want:
            # disagreements only at disc-boundary tangencies
            assert got == 1.0


# -- moving risk -------------------------------------------------------------


def test_moving_no_obstacles():
    assert moving_collision_prob([], (0, 0), 0.1, 0.0) == 0.0


def test_moving_two_half_risks_compose():
    assert combine_moving([0.5, 0.5]) == pytest.approx(0.75)
    # place two obstacles at the exact distance giving per-obstacle risk 0.5
    sigma = 0.3
    gap = sigma * math.sqrt(2.0 * math.log(2.0))
    d = 0.4 + gap  # contact radius 0.1 + 0.3
    obs = [obstacle([(0.0, d, 0.0)], oid="a"), obstacle([(0.0, 0.0, d)], oid="b")]
    got = moving_collision_prob(obs, (0.0, 0.0), 0.1, 0.0, sigma_risk=sigma)
    assert got == pytest.approx(0.75, abs=1e-12)


def test_moving_contact_is_certain():
    obs = [obstacle([(0.0, 0.2, 0.0)])]
    assert moving_collision_prob(obs, (0, 0), 0.1, 0.0) == 1.0


def test_moving_product_form_against_direct_evaluation():
    rng = np.random.default_rng(11)
    for _ in range(200):
        ps = rng.random(rng.integers(1, 6))
        direct = 1.0 - np.prod(1.0 - ps)
        assert abs(combine_moving(ps.tolist()) - direct) < 1e-12


def test_unobserved_obstacle_contributes_nothing():
    obs = [obstacle([(5.0, 0.0, 0.0)], observed=-math.inf)]
    assert moving_collision_prob(obs, (0, 0), 0.1, 1.0) == 0.0


# -- composition -------------------------------------------------------------


def test_compose_examples():
    assert compose_risk(0.2, 0.5) == pytest.approx(0.6)
    assert compose_risk(1.0, 0.3) == 1.0
    assert compose_risk(0.0, 0.75) == pytest.approx(0.75)


def test_collision_prob_composes_static_and_moving():
    cells = np.zeros((10, 10))
    grid = StaticMap(cells, RES)
    obs = [obstacle([(0.0, 0.5, 0.5)])]
    got = collision_prob(grid, obs, (0.5, 0.5), 0.1, 0.0)
    assert got == 1.0  # contact


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.lists(st.floats(0, 1), max_size=5))
def test_compose_risk_monotone_and_bounded(p_static, risks):
    total = compose_risk(p_static, combine_moving(risks))
    assert 0.0 <= total <= 1.0 + 1e-12
    assert total >= p_static - 1e-12
    if any(r == 1.0 for r in risks) or p_static == 1.0:
        assert total == pytest.approx(1.0)
    if not risks:
        assert total == pytest.approx(p_static)


def test_collision_prob_monotone_randomized():
    rng = np.random.default_rng(2)
    for _ in range(10_000):
        ps = rng.random()
        risks = rng.random(3)
        base = compose_risk(ps, combine_moving(risks))
        bumped_static = compose_risk(min(1.0, ps + rng.random() * (1 - ps)), combine_moving(risks))
        k = rng.integers(3)
        bump = risks.copy()
        bump[k] = min(1.0, bump[k] + rng.random() * (1 - bump[k]))
        bumped_moving = compose_risk(ps, combine_moving(bump))
        assert bumped_static >= base - 1e-12
        assert bumped_moving >= base - 1e-12


# -- prediction ---------------------------------------------------------------


def test_predict_constant_velocity():
    obs = obstacle([(0.0, 0.0, 0.0), (1.0, 1.0, 0.0)], observed=1.0)
    got = predict_position(obs, 1.0, 2, 1.0)
    assert got == [(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]


def test_predict_single_sample_zero_velocity():
    obs = obstacle([(0.0, 5.0, 5.0)], observed=0.0)
    got = predict_position(obs, 0.0, 3, 0.5)
    assert got == [(5.0, 5.0)] * 4


def test_predict_tangent_of_circular_mover():
    ts = np.arange(0.0, 1.01, 0.1)
    xs = np.cos(ts)
    ys = np.sin(ts)
    obs = DynamicObstacle("c", 0.2, ts, xs, ys, observed_up_to=1.0)
    got = predict_position(obs, 1.0, 5, 0.1)
    # hand-computed tangent from the last two samples
    vx = (xs[-1] - xs[-2]) / 0.1
    vy = (ys[-1] - ys[-2]) / 0.1
    for k, (x, y) in enumerate(got):
        assert x == pytest.approx(xs[-1] + vx * 0.1 * k, abs=1e-12)
        assert y == pytest.approx(ys[-1] + vy * 0.1 * k, abs=1e-12)


def test_predict_requires_observation():
    obs = obstacle([(1.0, 0.0, 0.0)], observed=2.0)
    with pytest.raises(NoObservation):
        predict_position(obs, 0.5, 1, 0.5)


def test_predict_never_uses_future_samples():
    obs = obstacle([(0.0, 0.0, 0.0), (1.0, 1.0, 0.0), (2.0, 1.0, 5.0)], observed=1.0)
    got = predict_position(obs, 1.0, 1, 1.0)
    # the (2.0, ...) sample is beyond the cursor: prediction stays on the x axis
    assert got == [(1.0, 0.0), (2.0, 0.0)]


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_predict_translation_equivariant(sx, sy):
    base = [(0.0, 1.0, 2.0), (1.0, 2.0, 2.5), (2.0, 2.5, 3.5)]
    obs_a = obstacle(base, observed=2.0)
    obs_b = obstacle([(t, x + sx, y + sy) for t, x, y in base], observed=2.0)
    pa = predict_position(obs_a, 2.0, 3, 0.5)
    pb = predict_position(obs_b, 2.0, 3, 0.5)
    for (ax, ay), (bx, by) in zip(pa, pb):
        assert bx == pytest.approx(ax + sx, rel=1e-9, abs=1e-9)
        assert by == pytest.approx(ay + sy, rel=1e-9, abs=1e-9)


def test_true_position_interpolates_and_clamps():
    obs = obstacle([(0.0, 0.0, 0.0), (2.0, 2.0, 0.0)])
    assert obs.true_position(1.0) == (1.0, 0.0)
    assert obs.true_position(-1.0) == (0.0, 0.0)
    assert obs.true_position(5.0) == (2.0, 0.0)


def test_risk_model_matches_operations():
    cells = np.zeros((20, 20))
    cells[10, 10] = 1.0
    grid = StaticMap(cells, RES)
    obs = [obstacle([(0.0, 0.3, 0.3), (0.5, 0.4, 0.3)], observed=0.5)]
    scenario = Scenario(grid=grid, obstacles=obs, start=State(0.2, 0.2, 0),
                        goal=(1.8, 1.8), goal_radius=0.2, dt=0.5)
    # uncertainty growth off: the model reproduces the operations exactly
    model = RiskModel(scenario, footprint_radius=0.1, sigma_risk=0.3,
                      uncertainty_growth=0.0)
    model.refresh(0.5)
    rng = np.random.default_rng(3)
    for _ in range(100):
        x, y = rng.uniform(0.15, 1.85, 2)
        t = rng.uniform(0.5, 3.0)
        want = collision_prob(grid, obs, (x, y), 0.1, t)
        got = model.node_risk(x, y, t)
        assert got == pytest.approx(want, abs=1e-12)
    xs = rng.uniform(0.15, 1.85, 50)
    ys = rng.uniform(0.15, 1.85, 50)
    ts = rng.uniform(0.5, 3.0, 50)
    many = model.moving_prob_many(xs, ys, ts)
    for i in range(50):
        assert many[i] == pytest.approx(
            moving_collision_prob(obs, (xs[i], ys[i]), 0.1, ts[i]), abs=1e-12)


def test_risk_model_uncertainty_growth_is_conservative():
    grid = StaticMap(np.zeros((20, 20)), RES)
    obs = [obstacle([(0.0, 0.3, 0.3), (0.5, 0.4, 0.3)], observed=0.5)]
    scenario = Scenario(grid=grid, obstacles=obs, start=State(0.2, 0.2, 0),
                        goal=(1.8, 1.8), goal_radius=0.2, dt=0.5)
    grown = RiskModel(scenario, footprint_radius=0.1, uncertainty_growth=1.0)
    grown.refresh(0.5, horizon_s=5.0)
    rng = np.random.default_rng(4)
    for _ in range(200):
        x, y = rng.uniform(0.15, 1.85, 2)
        # zero lookahead is exact
        assert grown.moving_prob(x, y, 0.5) == pytest.approx(
            moving_collision_prob(obs, (x, y), 0.1, 0.5), abs=1e-12)
        # future lookahead inflates (within the commitment window)
        t = float(rng.uniform(0.6, 2.5))
        assert grown.moving_prob(x, y, t) >= moving_collision_prob(obs, (x, y), 0.1, t) - 1e-12


# -- files ---------------------------------------------------------------------


MAP_TEXT = """5 3 0.1
.....
..#..
.....
"""


def test_load_map_round_trip(tmp_path):
    p = tmp_path / "m.map"
    p.write_text(MAP_TEXT)
    grid = load_map(p)
    assert (grid.width, grid.height) == (5, 3)
    assert grid.cells[1, 2] == 1.0
    assert grid.cells.sum() == 1.0
    out = tmp_path / "copy.map"
    save_map(out, grid)
    assert load_map(out).cells.tolist() == grid.cells.tolist()


@pytest.mark.parametrize("text", [
    "", "5 3\n.....\n..#..\n.....\n", "5 3 0.1\n....\n..#..\n.....\n",
    "5 3 0.1\n.....\n..X..\n.....\n", "5 3 0.1\n.....\n"  # short file
])
def test_load_map_rejects_malformed(tmp_path, text):
    p = tmp_path / "bad.map"
    p.write_text(text)
    with pytest.raises(ParseError):
        load_map(p)


def test_load_trajectories(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("obstacle_id,t,x,y,radius\na,0.0,1.0,2.0,0.3\na,1.0,1.5,2.0,0.3\n")
    obs = load_trajectories(p)
    assert len(obs) == 1 and len(obs[0].times) == 2
    assert obs[0].radius == 0.3


def test_load_trajectories_decreasing_t(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("obstacle_id,t,x,y,radius\na,1.0,1.0,2.0,0.3\na,0.5,1.5,2.0,0.3\n")
    with pytest.raises(ValidationError):
        load_trajectories(p)


def test_trajectories_round_trip(tmp_path):
    obs = [obstacle([(0.0, 1.0, 2.0), (0.5, 1.25, 2.0)], oid="a"),
           obstacle([(0.0, 3.0, 3.0)], radius=0.5, oid="b")]
    p = tmp_path / "t.csv"
    save_trajectories(p, obs)
    loaded = load_trajectories(p)
    assert [o.obstacle_id for o in loaded] == ["a", "b"]
    assert loaded[0].xs.tolist() == [1.0, 1.25]
    assert loaded[1].radius == 0.5


def write_scenario(tmp_path, traj_text=None, start=(0.25, 0.25, 0.0), goal=(0.45, 0.25)):
    (tmp_path / "m.map").write_text(MAP_TEXT)
    traj_name = None
    if traj_text is not None:
        (tmp_path / "t.csv").write_text(traj_text)
        traj_name = "t.csv"
    import json
    doc = {"map": "m.map", "trajectories": traj_name, "start": list(start),
           "goal": list(goal), "goal_radius": 0.1, "dt": 0.5, "horizon_depth": 5}
    p = tmp_path / "scenario.json"
    p.write_text(json.dumps(doc))
    return p


def test_load_scenario_minimal(tmp_path):
    sc = load_scenario(write_scenario(tmp_path))
    assert sc.obstacles == []
    assert sc.start.x == 0.25


def test_load_scenario_with_trajectories(tmp_path):
    sc = load_scenario(write_scenario(
        tmp_path, "obstacle_id,t,x,y,radius\na,0.0,0.1,0.1,0.05\na,1.0,0.2,0.1,0.05\n"))
    assert len(sc.obstacles) == 1
    assert len(sc.obstacles[0].times) == 2


def test_load_scenario_occupied_start(tmp_path):
    with pytest.raises(ValidationError):
        load_scenario(write_scenario(tmp_path, start=(0.25, 0.15, 0.0)))


def test_load_scenario_unknown_key(tmp_path):
    p = write_scenario(tmp_path)
    import json
    doc = json.loads(p.read_text())
    doc["bogus"] = 1
    p.write_text(json.dumps(doc))
    with pytest.raises(ParseError):
        load_scenario(p)
