"""Open-loop replay: logged agents, planned ego, per-run metrics.

Replay logs store per-frame agent states at a fixed rate in the global
lane frame (lane i centered at d = i * lane_width).  During a run the
chosen agent is removed and replaced by the planner-driven ego while every
other agent follows its log verbatim (linearly interpolated between
frames).
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from ..config import PlannerConfig
from ..errors import AllBehaviorsFailed, MissingEgo, TruncatedLog
from ..planner import plan_episode
from ..scene import Agent, EgoVehicle, FrenetState, LaneLabel, LaneModel, Scene
from .metrics import Metrics, response_time
from .simulator import SIM_DT, RoadSpec

REPLAY_HEADER = ["frame", "time", "id", "s", "d", "v_s", "v_d", "length", "width"]


@dataclass
class AgentTrack:
    id: str
    times: np.ndarray
    s: np.ndarray
    d: np.ndarray
    v_s: np.ndarray
    v_d: np.ndarray
    length: float
    width: float

    def covers(self, t: float) -> bool:
        return self.times[0] - 1e-9 <= t <= self.times[-1] + 1e-9

    def state_at(self, t: float) -> FrenetState:
        s = float(np.interp(t, self.times, self.s))
        d = float(np.interp(t, self.times, self.d))
        v_s = float(np.interp(t, self.times, self.v_s))
        v_d = float(np.interp(t, self.times, self.v_d))
        return FrenetState(s, d, max(v_s, 0.0), v_d)


@dataclass
class ReplayLog:
    frame_period: float
    tracks: dict
    road: RoadSpec = field(default_factory=RoadSpec)

    @property
    def duration(self) -> float:
        return max(float(tr.times[-1]) for tr in self.tracks.values())

    def validate(self) -> None:
        for track in self.tracks.values():
            diffs = np.diff(track.times)
            if np.any(diffs <= 0):
                raise ValueError(f"track {track.id}: frames not strictly ordered")
            if np.any(np.abs(diffs - self.frame_period) > 1e-6):
                raise ValueError(f"track {track.id}: trace not contiguous")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPLAY_HEADER)
        rows = []
        for track in self.tracks.values():
            for k, t in enumerate(track.times):
                frame = int(round(t / self.frame_period))
                rows.append(
                    (
                        frame,
                        f"{t:.3f}",
                        track.id,
                        f"{track.s[k]:.4f}",
                        f"{track.d[k]:.4f}",
                        f"{track.v_s[k]:.4f}",
                        f"{track.v_d[k]:.4f}",
                        f"{track.length:.2f}",
                        f"{track.width:.2f}",
                    )
                )
        rows.sort(key=lambda r: (r[0], r[2]))
        writer.writerows(rows)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, frame_period: float = 0.1, road: RoadSpec | None = None) -> "ReplayLog":
        reader = csv.DictReader(io.StringIO(text))
        raw: dict = {}
        for row in reader:
            entry = raw.setdefault(
                row["id"], {"t": [], "s": [], "d": [], "v_s": [], "v_d": [], "length": 4.5, "width": 2.0}
            )
            entry["t"].append(float(row["time"]))
            entry["s"].append(float(row["s"]))
            entry["d"].append(float(row["d"]))
            entry["v_s"].append(float(row["v_s"]))
            entry["v_d"].append(float(row["v_d"]))
            entry["length"] = float(row["length"])
            entry["width"] = float(row["width"])
        tracks = {}
        for agent_id, entry in raw.items():
            order = np.argsort(entry["t"])
            tracks[agent_id] = AgentTrack(
                id=agent_id,
                times=np.asarray(entry["t"])[order],
                s=np.asarray(entry["s"])[order],
                d=np.asarray(entry["d"])[order],
                v_s=np.asarray(entry["v_s"])[order],
                v_d=np.asarray(entry["v_d"])[order],
                length=entry["length"],
                width=entry["width"],
            )
        log = cls(frame_period=frame_period, tracks=tracks, road=road or RoadSpec())
        log.validate()
        return log


def generate_replay(
    seed: int,
    duration: float = 12.0,
    road: RoadSpec | None = None,
    density: float = 1.0,
    frame_period: float = 0.1,
    span: float = 420.0,
    ego_lane: int | None = None,
    ego_changes_lane: bool = False,
    slow_leader: bool = False,
) -> tuple[ReplayLog, str, int]:
    """Synthetic traffic log with a nominal ego trace.

    ``density`` is vehicles per 100 m per lane (Poisson gaps with a safety
    floor).  Returns (log, ego_id, target_lane_index): the target lane is
    where the nominal ego trace ends, mirroring the replay protocol of
    recorded datasets.  ``slow_leader`` plants a slower vehicle ahead of the
    ego start to make lane-change runs meaningful; agents otherwise cruise
    at constant per-lane speeds.
    """
    road = road or RoadSpec()
    rng = np.random.default_rng(seed)
    times = np.arange(0.0, duration + frame_period / 2, frame_period)
    tracks: dict = {}

    ego_lane = int(rng.integers(0, road.lane_count)) if ego_lane is None else ego_lane
    ego_v = float(rng.uniform(11.0, 14.0))
    ego_s0 = 120.0
    if ego_changes_lane:
        target_lane = ego_lane + 1 if ego_lane + 1 < road.lane_count else ego_lane - 1
    else:
        target_lane = ego_lane

    # nominal ego trace: constant speed; lateral blend between lane centers
    d0 = road.lane_center(ego_lane)
    d1 = road.lane_center(target_lane)
    t0, t1 = 3.0, 7.0
    blend = np.clip((times - t0) / (t1 - t0), 0.0, 1.0)
    smooth = blend * blend * (3.0 - 2.0 * blend)
    ego_d = d0 + (d1 - d0) * smooth
    ego_vd = np.gradient(ego_d, frame_period)
    tracks["ego"] = AgentTrack(
        id="ego",
        times=times,
        s=ego_s0 + ego_v * times,
        d=ego_d,
        v_s=np.full_like(times, ego_v),
        v_d=ego_vd,
        length=4.5,
        width=2.0,
    )

    base_speed = {
        lane: float(rng.uniform(9.0, 14.0)) for lane in range(road.lane_count)
    }
    # The planner's ego should blend with the recorded flow, not race it:
    # cap the road speed just above the fastest lane.
    road = RoadSpec(
        lane_count=road.lane_count,
        lane_width=road.lane_width,
        speed_limit=max(max(base_speed.values()), ego_v) + 1.0,
    )
    idx = 0
    mean_gap = 100.0 / max(density, 1e-3)
    for lane in range(road.lane_count):
        v_lane = base_speed[lane]
        s = float(rng.uniform(0.0, mean_gap * 0.5))
        while s < span:
            keep_out = lane == ego_lane and abs(s - ego_s0) < 30.0
            if not keep_out:
                v = v_lane + float(rng.uniform(-0.5, 0.5))
                tracks[f"a{idx}"] = AgentTrack(
                    id=f"a{idx}",
                    times=times,
                    s=s + v * times,
                    d=np.full_like(times, road.lane_center(lane)),
                    v_s=np.full_like(times, v),
                    v_d=np.zeros_like(times),
                    length=4.5,
                    width=2.0,
                )
                idx += 1
            s += max(float(rng.exponential(mean_gap)), 18.0)

    if slow_leader:
        v = max(ego_v - 6.0, 4.0)
        tracks["lead"] = AgentTrack(
            id="lead",
            times=times,
            s=ego_s0 + 42.0 + v * times,
            d=np.full_like(times, road.lane_center(ego_lane)),
            v_s=np.full_like(times, v),
            v_d=np.zeros_like(times),
            length=4.5,
            width=2.0,
        )

    log = ReplayLog(frame_period=frame_period, tracks=tracks, road=road)
    log.validate()
    return log, "ego", target_lane


def _scene_from_replay(log: ReplayLog, ego, t: float, config: PlannerConfig) -> Scene:
    road = log.road
    lane_index = road.lane_of(ego["d"])
    center = road.lane_center(lane_index)
    lanes = LaneModel(
        lane_count=road.lane_count,
        lane_width=road.lane_width,
        reference_line=np.array([[ego["s"] - 1000.0, center], [ego["s"] + 1000.0, center]]),
        speed_limit=road.speed_limit,
        current_index=lane_index,
    )
    window = 1.5 * road.lane_width + config.straddle_tolerance
    agents = []
    for track in log.tracks.values():
        if track.id == ego["removed_id"] or not track.covers(t):
            continue
        st = track.state_at(t)
        if abs(st.s - ego["s"]) > config.sensing_range:
            continue
        rel_d = st.d - center
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
                id=track.id,
                state=FrenetState(st.s, rel_d, st.v_s, st.v_d),
                length=track.length,
                width=track.width,
                lane=label,
            )
        )
    state = FrenetState(ego["s"], ego["d"] - center, ego["v_s"], ego["v_d"], ego["a_s"], ego["a_d"])
    return Scene(
        lanes=lanes,
        ego=EgoVehicle(state=state, length=ego["length"], width=ego["width"]),
        agents=tuple(agents),
        timestamp=t,
    )


@dataclass
class OpenLoopResult:
    outcome: str  # "success" | "failure" | "wrong_lane"
    metrics: Metrics
    final_lane: int
    trace: dict


def run_open_loop(
    log: ReplayLog,
    ego_id: str,
    target_lane: int,
    horizon: float = 10.0,
    config: PlannerConfig | None = None,
) -> OpenLoopResult:
    """Replace one logged agent with the planner and replay the rest.

    Success requires finishing the horizon collision-free in the target
    lane; collisions and aborted planning count as failure; surviving in
    another lane is tracked separately so every run lands in exactly one
    bucket.
    """
    config = config or PlannerConfig()
    # Dataset protocol: the replayed ego blends with the recorded flow, so
    # its kinematic speed cap follows the log's road speed.
    if log.road.speed_limit < config.limits.v_s_max:
        from dataclasses import replace as _replace

        config = config.with_overrides(
            limits=_replace(config.limits, v_s_max=log.road.speed_limit)
        )
    track = log.tracks.get(ego_id)
    if track is None:
        raise MissingEgo(f"no agent {ego_id!r} in the log")
    if not (track.covers(0.0) and track.covers(horizon)):
        raise TruncatedLog(f"agent {ego_id!r} does not span [0, {horizon}]s")
    if log.duration + 1e-9 < horizon:
        raise TruncatedLog(f"log ends at {log.duration}s before the {horizon}s horizon")

    start = track.state_at(0.0)
    ego = {
        "removed_id": ego_id,
        "s": start.s,
        "d": start.d,
        "v_s": start.v_s,
        "v_d": 0.0,
        "a_s": 0.0,
        "a_d": 0.0,
        "length": track.length,
        "width": track.width,
    }
    road = log.road
    metrics = Metrics(runs=1)
    steps_per_plan = max(1, int(round(config.replan_period / SIM_DT)))
    n_steps = int(round(horizon / SIM_DT))
    trace = {"t": [], "s": [], "d": [], "v_s": [], "response_time": [], "lane": []}
    trajectory = None
    traj_start = 0.0
    traj_center = 0.0
    consecutive_failures = 0
    aborted = None
    collided = False

    def front_agent(t):
        lane_index = road.lane_of(ego["d"])
        center = road.lane_center(lane_index)
        best = None
        for tr in log.tracks.values():
            if tr.id == ego_id or not tr.covers(t):
                continue
            st = tr.state_at(t)
            if road.lane_of(st.d) != lane_index or st.s <= ego["s"]:
                continue
            if best is None or st.s < best[0].s:
                best = (st, tr)
        if best is None:
            return None
        st, tr = best
        return Agent(tr.id, FrenetState(st.s, st.d - center, st.v_s, st.v_d), tr.length, tr.width, LaneLabel.CURRENT)

    def record(t):
        trace["t"].append(t)
        trace["s"].append(ego["s"])
        trace["d"].append(ego["d"])
        trace["v_s"].append(ego["v_s"])
        trace["lane"].append(road.lane_of(ego["d"]))
        state = FrenetState(ego["s"], 0.0, ego["v_s"], 0.0)
        trace["response_time"].append(response_time(state, front_agent(t), config.limits, ego["length"]))

    def replan(t) -> bool:
        nonlocal trajectory, traj_start, traj_center
        scene = _scene_from_replay(log, ego, t, config)
        t0 = time.perf_counter()
        try:
            result = plan_episode(scene, config)
        except AllBehaviorsFailed:
            metrics.planning_failures += 1
            return False
        finally:
            metrics.episode_latencies_ms.append((time.perf_counter() - t0) * 1e3)
        trajectory = result.selected_trajectory
        traj_start = t
        traj_center = road.lane_center(road.lane_of(ego["d"]))
        return True

    if not replan(0.0):
        aborted = "no initial plan"
    record(0.0)

    if aborted is None:
        for step in range(1, n_steps + 1):
            t = step * SIM_DT
            if step % steps_per_plan == 0:
                if replan(t - SIM_DT):
                    consecutive_failures = 0
                else:
                    consecutive_failures += 1
                    if consecutive_failures >= 2:
                        aborted = "two consecutive planning failures"
                        break
            rel = min(max(t - traj_start, 0.0), trajectory.t_end)
            ego["s"] = trajectory.value(rel, "s")
            ego["d"] = traj_center + trajectory.value(rel, "d")
            ego["v_s"] = max(trajectory.value(rel, "s", 1), 0.0)
            ego["v_d"] = trajectory.value(rel, "d", 1)
            ego["a_s"] = trajectory.value(rel, "s", 2)
            ego["a_d"] = trajectory.value(rel, "d", 2)
            for tr in log.tracks.values():
                if tr.id == ego_id or not tr.covers(t):
                    continue
                st = tr.state_at(t)
                if (
                    abs(st.s - ego["s"]) < 0.5 * (tr.length + ego["length"])
                    and abs(st.d - ego["d"]) < 0.5 * (tr.width + ego["width"])
                ):
                    metrics.collisions += 1
                    collided = True
                    aborted = f"collision with {tr.id} at t={t:.2f}"
                    break
            if collided:
                break
            record(t)

    final_lane = road.lane_of(ego["d"])
    if aborted is not None:
        outcome = "failure"
        metrics.failures = 1
    elif final_lane == target_lane:
        outcome = "success"
        metrics.successes = 1
    else:
        outcome = "wrong_lane"
        metrics.wrong_lane = 1

    metrics.total_frames = len(trace["t"])
    metrics.danger_frames = int(np.count_nonzero(np.asarray(trace["response_time"]) < 1.0))
    if len(trace["t"]) >= 2:
        metrics.driving_time = float(trace["t"][-1] - trace["t"][0])
        metrics.distance = float(trace["s"][-1] - trace["s"][0])
    return OpenLoopResult(outcome=outcome, metrics=metrics, final_lane=final_lane, trace=trace)


def run_open_loop_batch(
    count: int,
    seed: int,
    config: PlannerConfig | None = None,
    density: float = 1.0,
    lane_change: bool = False,
    horizon: float = 10.0,
    duration: float = 12.0,
) -> tuple[Metrics, list]:
    """Seeded batch of synthetic replay runs; returns merged metrics."""
    config = config or PlannerConfig()
    total = Metrics()
    outcomes = []
    for i in range(count):
        log, ego_id, target = generate_replay(
            seed=seed + i,
            duration=duration,
            density=density,
            ego_changes_lane=lane_change,
            slow_leader=lane_change,
        )
        result = run_open_loop(log, ego_id, target, horizon=horizon, config=config)
        outcomes.append(result.outcome)
        total = total.merge(result.metrics)
    return total, outcomes
