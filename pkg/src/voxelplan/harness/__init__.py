"""Closed-loop simulator, open-loop replay, metrics, ablations, and CLI."""

from .ablation import VARIANTS, ablation_table, run_ablation, variant_config
from .metrics import Metrics, compute_risk, response_time, simulate_response_time
from .replay import ReplayLog, generate_replay, run_open_loop, run_open_loop_batch
from .scenario import Scenario, endurance_scenario
from .simulator import (
    EgoRuntime,
    IdmParams,
    RoadSpec,
    SimAgent,
    SimWorld,
    idm_acceleration,
    populate_traffic,
    run_closed_loop,
    scene_from_world,
    step_sim,
)
from .svg import corridor_diagram, profile_diagram
