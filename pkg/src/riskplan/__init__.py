"""Risk-aware tree planning in dynamic 2-D environments with adaptive
heuristic-region guidance, plus a reproducible benchmark harness."""

from .errors import (ConfigError, EmptyRegion, GenerationFailure,
                     GeneratorFailure, NoObservation, ParseError,
                     RiskplanError, ValidationError)
from .kinematics import (Control, ControlLimits, State, motion_cost,
                         normalize_angle, propagate, reachable_controls)
from .world import (DynamicObstacle, RiskModel, Scenario, StaticMap,
                    collision_prob, combine_moving, compose_risk, load_map,
                    load_scenario, load_trajectories, moving_collision_prob,
                    per_obstacle_risk, predict_position, save_map,
                    save_scenario, save_trajectories, static_collision_prob)
from .heuristic import (HeuristicRegion, OracleCorridorGenerator, RegionHub,
                        bfs_waypoints, net_infer, oracle_corridor,
                        region_sample, shortest_grid_path)
from .sampler import AdaptiveSampler, Waypoints, decay_bias, uniform_state
from .timetree import TimeTree, Trajectory, TrajectoryPoint, goal_reached
from .multitree import ROOT_TREE, SubTreeParams, SubTreeSet, find_closest_tree, meet
from .planner import (VARIANTS, PlanOutcome, PlannerConfig, PlanStats,
                      plan, replay_safety, trajectory_length)
from .bench import (BenchReport, BenchSuite, ScenarioSpec, execute_run,
                    gen_dynamics, gen_map, run_suite)

__version__ = "0.1.0"
