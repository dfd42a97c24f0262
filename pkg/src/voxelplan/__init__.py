"""Adaptive voxel-corridor trajectory planning for highway traffic."""

from .config import KinodynamicLimits, ObjectiveWeights, PlannerConfig
from .bezier import BezierSegment, PiecewiseBezier, curvature_profile, derivative_control_points, evaluate
from .planner import EpisodeResult, BehaviorOutcome, evaluate_trajectory, plan_episode
from .qp_solver import KktResiduals, Multipliers, QpOptions, QpProblem, QpSolution, SolveStatus, check_kkt, solve
from .scene import (
    Agent,
    EgoVehicle,
    FrenetState,
    LaneLabel,
    LaneModel,
    Scene,
    predict_occupancy,
    related_agents,
    to_frenet,
)
from .voxel_graph import Behavior, GraphThresholds, VoxelGraph, VoxelNode, build_graph, edge_cost, intersection_check, lane_check, search
from .voxelizer import (
    TimePartition,
    Voxel,
    VoxelSet,
    free_ranges,
    generate_voxels,
    lateral_bounds,
    make_partition,
    reachable_s_bounds,
)
from .optimizer import (
    IdealEndStates,
    SequenceChange,
    Violation,
    assemble,
    ideal_end_states,
    modify_sequence_for_lane_change,
    optimize_with_retry,
    trajectory_from_solution,
    verify,
)

__version__ = "0.1.0"
