"""Deterministic closed-loop highway simulator.

The world lives in a global lane frame: lane index 0 is the rightmost lane
and lane i's centerline sits at d = i * lane_width (d positive to the
left).  Agents follow an intelligent-driver car-following law and stay in
their lanes; the ego executes its planned trajectory between replans.
Everything is driven by one seeded generator, so a given scenario replays
bit-for-bit.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..config import PlannerConfig
from ..errors import AllBehaviorsFailed, CollisionDetected
from ..bezier import PiecewiseBezier
from ..planner import plan_episode
from ..scene import Agent, EgoVehicle, FrenetState, LaneLabel, LaneModel, Scene
from .metrics import Metrics, response_time

SIM_DT = 0.02
RECYCLE_BEHIND = 150.0
RECYCLE_AHEAD = (180.0, 280.0)
SPAWN_CLEARANCE = 35.0


@dataclass
class IdmParams:
    """Intelligent-driver model constants for simulated agents."""

    accel_max: float = 1.5
    decel_comfort: float = 1.5
    decel_max: float = 4.0
    gap_min: float = 2.0
    headway: float = 1.5
    exponent: float = 4.0


@dataclass
class RoadSpec:
    lane_count: int = 4
    lane_width: float = 4.0
    speed_limit: float = 25.0

    def lane_center(self, index: int) -> float:
        return index * self.lane_width

    def lane_of(self, d: float) -> int:
        return int(np.clip(round(d / self.lane_width), 0, self.lane_count - 1))


@dataclass
class SimAgent:
    id: str
    lane_index: int
    s: float
    v: float
    length: float = 4.5
    width: float = 2.0
    v_cap: float = 15.0
    idm: IdmParams = field(default_factory=IdmParams)


@dataclass
class EgoRuntime:
    s: float
    d: float
    v_s: float = 0.0
    v_d: float = 0.0
    a_s: float = 0.0
    a_d: float = 0.0
    j_s: float = 0.0
    j_d: float = 0.0
    length: float = 4.5
    width: float = 2.0
    v_cap: float = 20.0
    trajectory: PiecewiseBezier | None = None
    trajectory_start: float = 0.0
    trajectory_lane_center: float = 0.0


@dataclass
class SimWorld:
    road: RoadSpec
    ego: EgoRuntime
    agents: list
    clock: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    recycle_traffic: bool = False

    def ego_lane_index(self) -> int:
        return self.road.lane_of(self.ego.d)


def idm_acceleration(agent: SimAgent, gap: float | None, lead_v: float | None) -> float:
    """Car-following acceleration; free-road form when there is no leader."""
    p = agent.idm
    v = max(agent.v, 0.0)
    free = 1.0 - (v / max(agent.v_cap, 0.1)) ** p.exponent
    if gap is None:
        a = p.accel_max * free
    else:
        dv = v - (lead_v if lead_v is not None else 0.0)
        s_star = p.gap_min + max(
            0.0, v * p.headway + v * dv / (2.0 * np.sqrt(p.accel_max * p.decel_comfort))
        )
        a = p.accel_max * (free - (s_star / max(gap, 0.1)) ** 2)
    return float(np.clip(a, -p.decel_max, p.accel_max))


def _leader_for(agent: SimAgent, world: SimWorld):
    """Nearest entity ahead in the agent's lane; the ego counts when it
    overlaps the lane (including while straddling during a change)."""
    best_gap = None
    best_v = None
    for other in world.agents:
        if other is agent or other.lane_index != agent.lane_index:
            continue
        ds = other.s - agent.s
        if ds <= 0:
            continue
        gap = ds - 0.5 * (other.length + agent.length)
        if best_gap is None or gap < best_gap:
            best_gap, best_v = gap, other.v
    ego = world.ego
    lane_center = world.road.lane_center(agent.lane_index)
    if abs(ego.d - lane_center) <= 0.5 * world.road.lane_width + 0.5 * ego.width:
        ds = ego.s - agent.s
        if ds > 0:
            gap = ds - 0.5 * (ego.length + agent.length)
            if best_gap is None or gap < best_gap:
                best_gap, best_v = gap, ego.v_s
    return best_gap, best_v


def step_sim(world: SimWorld, dt: float) -> SimWorld:
    """Advance the world by dt: ego along its trajectory, agents under IDM.

    Raises CollisionDetected when the ego's box overlaps an agent's box
    after the step.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    ego = world.ego
    if ego.trajectory is None:
        raise ValueError("ego has no trajectory to execute")
    t_new = world.clock + dt
    rel = min(max(t_new - ego.trajectory_start, 0.0), ego.trajectory.t_end)
    traj = ego.trajectory
    ego.s = traj.value(rel, "s")
    ego.d = ego.trajectory_lane_center + traj.value(rel, "d")
    ego.v_s = max(traj.value(rel, "s", 1), 0.0)
    ego.v_d = traj.value(rel, "d", 1)
    ego.a_s = traj.value(rel, "s", 2)
    ego.a_d = traj.value(rel, "d", 2)
    ego.j_s = traj.value(rel, "s", 3)
    ego.j_d = traj.value(rel, "d", 3)

    for agent in world.agents:
        gap, lead_v = _leader_for(agent, world)
        a = idm_acceleration(agent, gap, lead_v)
        agent.v = float(np.clip(agent.v + a * dt, 0.0, agent.v_cap))
        agent.s += agent.v * dt

    world.clock = t_new

    for agent in world.agents:
        lane_center = world.road.lane_center(agent.lane_index)
        if (
            abs(agent.s - ego.s) < 0.5 * (agent.length + ego.length)
            and abs(lane_center - ego.d) < 0.5 * (agent.width + ego.width)
        ):
            raise CollisionDetected(agent.id, world.clock)
    return world


def scene_from_world(world: SimWorld, config: PlannerConfig) -> Scene:
    """Planner-facing snapshot in the current lane's Frenet frame."""
    road = world.road
    ego = world.ego
    lane_index = world.ego_lane_index()
    center = road.lane_center(lane_index)
    lanes = LaneModel(
        lane_count=road.lane_count,
        lane_width=road.lane_width,
        reference_line=np.array([[ego.s - 1000.0, center], [ego.s + 1000.0, center]]),
        speed_limit=road.speed_limit,
        current_index=lane_index,
    )
    agents = []
    window = 1.5 * road.lane_width + config.straddle_tolerance
    for agent in world.agents:
        if abs(agent.s - ego.s) > config.sensing_range:
            continue
        rel_d = road.lane_center(agent.lane_index) - center
        if abs(rel_d) > window:
            continue
        if rel_d > 0.5 * road.lane_width:
            label = LaneLabel.LEFT
        elif rel_d < -0.5 * road.lane_width:
            label = LaneLabel.RIGHT
        else:
            label = LaneLabel.CURRENT
        agents.append(
            Agent(
                id=agent.id,
                state=FrenetState(agent.s, rel_d, agent.v, 0.0),
                length=agent.length,
                width=agent.width,
                lane=label,
            )
        )
    ego_state = FrenetState(
        s=ego.s,
        d=ego.d - center,
        v_s=ego.v_s,
        v_d=ego.v_d,
        a_s=ego.a_s,
        a_d=ego.a_d,
    )
    return Scene(
        lanes=lanes,
        ego=EgoVehicle(state=ego_state, length=ego.length, width=ego.width),
        agents=tuple(agents),
        timestamp=world.clock,
    )


def populate_traffic(world: SimWorld, count: int, speed_range=(10.0, 14.5)) -> None:
    """Seeded initial agent placement around the ego, collision-free."""
    rng = world.rng
    placed = 0
    guard = 0
    while placed < count and guard < count * 50:
        guard += 1
        lane = int(rng.integers(0, world.road.lane_count))
        s = world.ego.s + float(rng.uniform(-80.0, 220.0))
        v = float(rng.uniform(*speed_range))
        if _spawn_clear(world, lane, s):
            world.agents.append(
                SimAgent(id=f"t{placed}", lane_index=lane, s=s, v=v, v_cap=v)
            )
            placed += 1


def _spawn_clear(world: SimWorld, lane: int, s: float) -> bool:
    for other in world.agents:
        if other.lane_index == lane and abs(other.s - s) < SPAWN_CLEARANCE:
            return False
    lane_center = world.road.lane_center(lane)
    if abs(lane_center - world.ego.d) < world.road.lane_width and abs(s - world.ego.s) < SPAWN_CLEARANCE:
        return False
    return True


def _recycle_agents(world: SimWorld, speed_range=(10.0, 14.5)) -> None:
    """Teleport agents that fell far behind to fresh slots ahead of the ego."""
    for agent in world.agents:
        if world.ego.s - agent.s > RECYCLE_BEHIND:
            lane = int(world.rng.integers(0, world.road.lane_count))
            s = world.ego.s + float(world.rng.uniform(*RECYCLE_AHEAD))
            v = float(world.rng.uniform(*speed_range))
            if _spawn_clear(world, lane, s):
                agent.lane_index = lane
                agent.s = s
                agent.v = v
                agent.v_cap = v


def _front_agent(world: SimWorld):
    ego = world.ego
    lane = world.ego_lane_index()
    center = world.road.lane_center(lane)
    best = None
    for agent in world.agents:
        if agent.lane_index != lane or agent.s <= ego.s:
            continue
        if best is None or agent.s < best.s:
            best = agent
    if best is None:
        return None
    return Agent(
        id=best.id,
        state=FrenetState(best.s, world.road.lane_center(best.lane_index) - center, best.v, 0.0),
        length=best.length,
        width=best.width,
        lane=LaneLabel.CURRENT,
    )


@dataclass
class ClosedLoopResult:
    metrics: Metrics
    trace: dict
    aborted_reason: str | None = None


def run_closed_loop(
    world: SimWorld,
    config: PlannerConfig,
    duration: float,
    speed_range=(10.0, 14.5),
) -> ClosedLoopResult:
    """Replan at the configured period and execute in between.

    One failed planning tick keeps executing the previous trajectory; two
    consecutive failures (or a collision) abort the run.  The trace records
    every simulation step for the risk and comfort metrics.
    """
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    metrics = Metrics(runs=1)
    steps_per_plan = max(1, int(round(config.replan_period / SIM_DT)))
    n_steps = int(round(duration / SIM_DT))
    trace = {
        key: []
        for key in (
            "t", "s", "d", "v_s", "v_d", "a_s", "a_d", "j_s", "j_d", "lane", "response_time",
        )
    }
    consecutive_failures = 0
    aborted = None
    lim = config.limits

    def record():
        ego = world.ego
        trace["t"].append(world.clock)
        trace["s"].append(ego.s)
        trace["d"].append(ego.d)
        trace["v_s"].append(ego.v_s)
        trace["v_d"].append(ego.v_d)
        trace["a_s"].append(ego.a_s)
        trace["a_d"].append(ego.a_d)
        trace["j_s"].append(ego.j_s)
        trace["j_d"].append(ego.j_d)
        trace["lane"].append(world.ego_lane_index())
        ego_state = FrenetState(ego.s, 0.0, ego.v_s, 0.0)
        trace["response_time"].append(
            response_time(ego_state, _front_agent(world), lim, ego.length)
        )

    def replan() -> bool:
        scene = scene_from_world(world, config)
        t0 = time.perf_counter()
        try:
            result = plan_episode(scene, config)
        except AllBehaviorsFailed:
            metrics.planning_failures += 1
            return False
        finally:
            metrics.episode_latencies_ms.append((time.perf_counter() - t0) * 1e3)
        world.ego.trajectory = result.selected_trajectory
        world.ego.trajectory_start = world.clock
        world.ego.trajectory_lane_center = world.road.lane_center(world.ego_lane_index())
        return True

    if not replan():
        metrics.failures = 1
        return ClosedLoopResult(metrics, trace, aborted_reason="no initial plan")
    record()

    prev_lane = world.ego_lane_index()
    for step in range(1, n_steps + 1):
        if step % steps_per_plan == 0:
            if replan():
                consecutive_failures = 0
            else:
                consecutive_failures += 1
                if consecutive_failures >= 2:
                    aborted = "two consecutive planning failures"
                    break
            if world.recycle_traffic:
                _recycle_agents(world, speed_range)
        try:
            step_sim(world, SIM_DT)
        except CollisionDetected as exc:
            metrics.collisions += 1
            aborted = str(exc)
            break
        record()
        lane = world.ego_lane_index()
        if lane != prev_lane:
            metrics.lane_changes += 1
            prev_lane = lane

    times = np.asarray(trace["t"])
    if times.size >= 2:
        metrics.driving_time = float(times[-1] - times[0])
        metrics.distance = float(trace["s"][-1] - trace["s"][0])
    metrics.total_frames = len(trace["t"])
    metrics.danger_frames = int(
        np.count_nonzero(np.asarray(trace["response_time"]) < 1.0)
    )
    if aborted is None:
        metrics.successes = 1
    else:
        metrics.failures = 1
    return ClosedLoopResult(metrics, trace, aborted_reason=aborted)
