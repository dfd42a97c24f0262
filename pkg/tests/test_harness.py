import json

import numpy as np
import pytest

from voxelplan import FrenetState, KinodynamicLimits, PlannerConfig, Agent, LaneLabel
from voxelplan.errors import CollisionDetected, MissingEgo, TruncatedLog
from voxelplan.harness import (
    Metrics,
    ReplayLog,
    RoadSpec,
    Scenario,
    SimAgent,
    SimWorld,
    compute_risk,
    endurance_scenario,
    generate_replay,
    idm_acceleration,
    response_time,
    run_closed_loop,
    run_open_loop,
    run_open_loop_batch,
    simulate_response_time,
    step_sim,
    variant_config,
)
from voxelplan.harness.ablation import VARIANTS
from voxelplan.harness.simulator import EgoRuntime, IdmParams
from voxelplan.bezier import BezierSegment, PiecewiseBezier

LIM = KinodynamicLimits()


def constant_speed_trajectory(s0, v, duration=8.0):
    points_s = s0 / duration + v * np.linspace(0.0, 1.0, 6)
    return PiecewiseBezier((BezierSegment(points_s, np.zeros(6), 0.0, duration),))


def world_with(agents, ego_s=0.0, ego_d=4.0, ego_v=10.0, seed=0):
    ego = EgoRuntime(s=ego_s, d=ego_d, v_s=ego_v, v_cap=20.0)
    ego.trajectory = constant_speed_trajectory(ego_s, ego_v)
    ego.trajectory_lane_center = 4.0
    return SimWorld(road=RoadSpec(), ego=ego, agents=agents, rng=np.random.default_rng(seed))


class TestIdm:
    def test_free_road_accelerates_toward_cap(self):
        agent = SimAgent("a", 0, 0.0, 5.0, v_cap=15.0)
        world = world_with([agent], ego_d=12.0, ego_s=500.0)
        for _ in range(3000):
            step_sim(world, 0.02)
        assert agent.v == pytest.approx(15.0, abs=0.2)

    def test_free_road_closed_form_start(self):
        # IDM free-road acceleration a = a_max (1 - (v/v0)^4), integrated at
        # the sim step; compare the first second against an oracle rollout.
        agent = SimAgent("a", 0, 0.0, 5.0, v_cap=15.0)
        world = world_with([agent], ego_d=12.0, ego_s=500.0)
        v, p = 5.0, 0.0
        idm = IdmParams()
        for _ in range(50):
            a = idm.accel_max * (1.0 - (v / 15.0) ** 4)
            v = min(v + a * 0.02, 15.0)
            p += v * 0.02
        for _ in range(50):
            step_sim(world, 0.02)
        assert agent.v == pytest.approx(v, abs=1e-9)
        assert agent.s == pytest.approx(p, abs=1e-9)

    def test_follower_never_hits_stopped_leader(self):
        # 8 m/s with a 15.5 m bumper gap: stoppable within the decel cap
        leader = SimAgent("lead", 0, 20.0, 0.0, v_cap=0.0)
        follower = SimAgent("f", 0, 0.0, 8.0, v_cap=15.0)
        world = world_with([leader, follower], ego_d=12.0, ego_s=500.0)
        for _ in range(2000):
            step_sim(world, 0.02)
            assert follower.s + 0.5 * (follower.length + leader.length) < leader.s + 1e-6
        assert follower.v == pytest.approx(0.0, abs=0.05)

    def test_idm_acceleration_clamped(self):
        agent = SimAgent("a", 0, 0.0, 15.0, v_cap=15.0)
        assert idm_acceleration(agent, 0.5, 0.0) == -agent.idm.decel_max


class TestStepSim:
    def test_ego_advances_exactly(self):
        world = world_with([], ego_s=100.0, ego_v=10.0)
        step_sim(world, 0.2)
        assert world.ego.s == pytest.approx(102.0, abs=1e-9)
        assert world.clock == pytest.approx(0.2)

    def test_collision_detected(self):
        agent = SimAgent("a", 1, 103.0, 0.0, v_cap=0.0)
        world = world_with([agent], ego_s=100.0, ego_v=10.0)
        with pytest.raises(CollisionDetected):
            for _ in range(20):
                step_sim(world, 0.02)

    def test_rejects_bad_dt(self):
        world = world_with([])
        with pytest.raises(ValueError):
            step_sim(world, 0.0)


class TestResponseTime:
    def agent(self, s, v, length=4.5):
        return Agent("f", FrenetState(s, 0.0, v, 0.0), length, 2.0, LaneLabel.CURRENT)

    def test_equal_speeds_gap_over_speed(self):
        ego = FrenetState(0.0, 0.0, 20.0, 0.0)
        front = self.agent(100.0 + 4.5, 20.0)  # bumper gap exactly 100
        assert response_time(ego, front, LIM) == pytest.approx(5.0)

    def test_zero_gap(self):
        ego = FrenetState(0.0, 0.0, 10.0, 0.0)
        front = self.agent(4.5, 10.0)
        assert response_time(ego, front, LIM) == 0.0

    def test_no_front_agent_infinite(self):
        ego = FrenetState(0.0, 0.0, 10.0, 0.0)
        assert response_time(ego, None, LIM) == float("inf")

    def test_matches_forward_simulation(self):
        rng = np.random.default_rng(50)
        for _ in range(20):
            ego = FrenetState(0.0, 0.0, float(rng.uniform(3.0, 22.0)), 0.0)
            front = self.agent(float(rng.uniform(8.0, 90.0)), float(rng.uniform(0.0, 18.0)))
            closed = response_time(ego, front, LIM)
            simulated = simulate_response_time(ego, front, LIM)
            if closed == float("inf") or simulated == float("inf"):
                assert closed == simulated
            else:
                assert closed == pytest.approx(simulated, abs=0.01)


class TestRisk:
    def test_all_safe(self):
        assert compute_risk([5.0, 10.0, float("inf")]) == 0.0

    def test_all_danger(self):
        assert compute_risk([0.0, 0.5, 0.99]) == 1.0

    def test_half(self):
        assert compute_risk([0.5] * 5 + [2.0] * 5) == 0.5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_risk([])


class TestReplayLog:
    def test_csv_round_trip(self):
        log, ego_id, target = generate_replay(seed=5, duration=3.0)
        text = log.to_csv()
        assert text.splitlines()[0] == "frame,time,id,s,d,v_s,v_d,length,width"
        back = ReplayLog.from_csv(text, frame_period=log.frame_period, road=log.road)
        assert set(back.tracks) == set(log.tracks)
        tr_a, tr_b = log.tracks[ego_id], back.tracks[ego_id]
        assert np.allclose(tr_a.s, tr_b.s, atol=1e-3)
        assert np.allclose(tr_a.d, tr_b.d, atol=1e-3)

    def test_contiguity_validation(self):
        log, *_ = generate_replay(seed=5, duration=2.0)
        track = log.tracks["ego"]
        track.times[3] += 0.05  # break the frame grid
        with pytest.raises(ValueError):
            log.validate()

    def test_interpolation(self):
        log, *_ = generate_replay(seed=5, duration=2.0)
        track = next(tr for tr in log.tracks.values() if tr.id != "ego")
        t = 0.55
        st = track.state_at(t)
        k = int(t / log.frame_period)
        frac = (t - k * log.frame_period) / log.frame_period
        expected = track.s[k] + frac * (track.s[k + 1] - track.s[k])
        assert st.s == pytest.approx(expected, abs=1e-9)

    def test_generated_log_keeps_min_gaps(self):
        log, *_ = generate_replay(seed=9, duration=10.0, density=2.5)
        by_lane: dict = {}
        for tr in log.tracks.values():
            if tr.id == "ego":
                continue
            by_lane.setdefault(round(tr.d[0] / 4.0), []).append(tr)
        for lane_tracks in by_lane.values():
            lane_tracks.sort(key=lambda tr: tr.s[0])
            for a, b in zip(lane_tracks, lane_tracks[1:]):
                assert b.s[0] - a.s[0] >= 17.9


class TestOpenLoop:
    def test_missing_ego(self):
        log, *_ = generate_replay(seed=5, duration=12.0)
        with pytest.raises(MissingEgo):
            run_open_loop(log, "nope", 0)

    def test_truncated_log(self):
        log, ego_id, target = generate_replay(seed=5, duration=4.0)
        with pytest.raises(TruncatedLog):
            run_open_loop(log, ego_id, target, horizon=10.0)

    def test_single_outcome_recorded(self):
        log, ego_id, target = generate_replay(seed=6, duration=12.0, density=0.8)
        result = run_open_loop(log, ego_id, target, config=PlannerConfig(occupancy_margin=3.25))
        m = result.metrics
        assert m.successes + m.failures + m.wrong_lane == 1
        assert result.outcome in ("success", "failure", "wrong_lane")
        assert 0.0 <= m.risk <= 1.0

    def test_batch_partition_property(self):
        cfg = PlannerConfig(occupancy_margin=3.25)
        metrics, outcomes = run_open_loop_batch(4, seed=77, config=cfg, density=0.8)
        assert metrics.runs == 4
        assert metrics.successes + metrics.failures + metrics.wrong_lane == 4
        assert len(outcomes) == 4


class TestClosedLoop:
    def test_empty_road_reaches_cap(self):
        scenario = Scenario.from_dict(
            {
                "lanes": {"count": 4, "width": 4.0},
                "speed_limits": {"road": 25.0, "ego": 20.0, "agents": 15.0},
                "ego": {"s": 0.0, "d": 4.0, "v_s": 12.0},
                "agents": [],
                "seed": 3,
            }
        )
        world = scenario.build_world()
        cfg = PlannerConfig(occupancy_margin=3.25)
        result = run_closed_loop(world, cfg, duration=60.0)
        m = result.metrics
        assert result.aborted_reason is None
        assert m.collisions == 0
        assert m.lane_changes == 0
        vs = np.asarray(result.trace["v_s"])
        assert vs[-1] > 19.0  # reaches and holds the cap region
        assert vs.max() <= 20.0 + 1e-4

    def test_boxed_in_start_aborts_gracefully(self):
        scenario = Scenario.from_dict(
            {
                "lanes": {"count": 2, "width": 4.0},
                "speed_limits": {"road": 25.0, "ego": 20.0, "agents": 15.0},
                "ego": {"s": 50.0, "d": 0.0, "v_s": 15.0},
                "agents": [
                    {"id": "wall0", "s": 58.0, "d": 0.0, "v_s": 0.0, "length": 10.0},
                    {"id": "wall1", "s": 58.0, "d": 4.0, "v_s": 0.0, "length": 10.0},
                    {"id": "tail0", "s": 44.0, "d": 0.0, "v_s": 0.0, "length": 10.0},
                ],
                "seed": 3,
            }
        )
        world = scenario.build_world()
        cfg = PlannerConfig(occupancy_margin=3.25)
        result = run_closed_loop(world, cfg, duration=10.0)
        assert result.aborted_reason is not None
        assert result.metrics.failures == 1
        assert result.metrics.planning_failures >= 1
        assert result.metrics.collisions == 0

    def test_executed_trace_within_comfort_limits(self):
        scenario = endurance_scenario(seed=4, agent_count=10)
        world = scenario.build_world()
        cfg = PlannerConfig(occupancy_margin=3.25)
        result = run_closed_loop(world, cfg, duration=30.0, speed_range=scenario.speed_range())
        for key, bound in (("a_s", 2.0), ("a_d", 2.0), ("j_s", 2.0), ("j_d", 2.0)):
            assert np.abs(np.asarray(result.trace[key])).max() <= bound + 1e-4

    def test_simulator_determinism(self):
        cfg = PlannerConfig(occupancy_margin=3.25)
        traces = []
        for _ in range(2):
            scenario = endurance_scenario(seed=11, agent_count=8)
            world = scenario.build_world()
            result = run_closed_loop(world, cfg, duration=10.0, speed_range=scenario.speed_range())
            traces.append(result.trace)
        assert traces[0]["s"] == traces[1]["s"]
        assert traces[0]["d"] == traces[1]["d"]


class TestAblationConfigs:
    def test_uniform_dt_differs_from_default(self):
        base = PlannerConfig()
        uniform = variant_config("uniform_dt", base)
        from voxelplan import make_partition

        default_p = make_partition(base.horizon, base.segment_count, base.segment_growth)
        uniform_p = make_partition(uniform.horizon, uniform.segment_count, uniform.segment_growth)
        assert not np.allclose(default_p.segments, uniform_p.segments)
        assert np.ptp(uniform_p.segments) == pytest.approx(0.0)

    def test_jerk_only_zeroes_other_weights(self):
        cfg = variant_config("jerk_only", PlannerConfig())
        w = cfg.weights
        assert w.w_jerk > 0
        assert w.w_end_position == w.w_end_velocity == 0.0
        assert w.w_lateral_velocity == w.w_longitudinal_accel == 0.0

    def test_jerk_only_objective_structure(self):
        # H must contain only jerk blocks: quadratic form vanishes on any
        # control-point vector whose third differences are zero
        from voxelplan import assemble, ideal_end_states, make_partition
        from voxelplan.voxelizer import Voxel

        cfg = variant_config("jerk_only", PlannerConfig())
        scenario = endurance_scenario(seed=1)
        scene = scenario.build_scene(cfg)
        partition = make_partition(6.0, 3, 1.0)
        seq = [
            Voxel(0.0, 500.0, -1.0, 1.0, partition.lt(i), partition.ut(i), LaneLabel.CURRENT)
            for i in range(3)
        ]
        ideals = ideal_end_states(seq, scene, cfg.weights, cfg.limits)
        problem = assemble(seq, scene.ego.state, ideals, cfg.weights, cfg.limits, partition)
        rng = np.random.default_rng(3)
        for _ in range(5):
            x = np.empty(36)
            for i in range(3):
                a, b, c = rng.uniform(-3, 3, 3)
                ks = np.arange(6.0)
                quad = a + b * ks + c * ks**2  # third differences vanish
                x[12 * i : 12 * i + 6] = quad
                x[12 * i + 6 : 12 * i + 12] = quad
            assert problem.objective_value(x) == pytest.approx(0.0, abs=1e-9)
        assert np.abs(problem.g).max() == 0.0

    def test_fixed_count_disables_shedding(self):
        cfg = variant_config("fixed_count", PlannerConfig())
        assert cfg.fixed_sequence_length

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            variant_config("bogus", PlannerConfig())

    def test_all_variants_construct(self):
        for name in VARIANTS:
            variant_config(name, PlannerConfig())


class TestMetricsSerialization:
    def test_deterministic_json_excludes_timing(self):
        m = Metrics(runs=2, successes=1, failures=1)
        m.episode_latencies_ms = [1.0, 2.0]
        payload = json.loads(m.to_json())
        assert "episode_latency_ms" not in payload
        assert payload["success_rate"] == 0.5

    def test_table_row_format(self):
        m = Metrics(runs=4, successes=3, failures=1, danger_frames=5, total_frames=50,
                    distance=120.0, driving_time=10.0)
        row = m.table_row("default")
        assert row == "default,0.750,0.250,0.100,12.00"
