import numpy as np
import pytest
from scipy.integrate import quad

from voxelplan import (
    Agent,
    Behavior,
    FrenetState,
    GraphThresholds,
    KinodynamicLimits,
    LaneLabel,
    ObjectiveWeights,
    QpOptions,
    assemble,
    build_graph,
    evaluate,
    generate_voxels,
    ideal_end_states,
    make_partition,
    modify_sequence_for_lane_change,
    optimize_with_retry,
    search,
    solve,
    trajectory_from_solution,
    verify,
)
from voxelplan.bezier import BezierSegment, PiecewiseBezier
from voxelplan.errors import EmptySequence, NoTransition, OptimizationFailed
from voxelplan.optimizer import warm_start_seed
from voxelplan.voxelizer import Voxel, VoxelSet
from voxelplan.voxel_graph import VoxelGraph, VoxelNode

from conftest import make_scene, straight_lanes

LIM = KinodynamicLimits()
W = ObjectiveWeights()
THR = GraphThresholds(0.25, 0.1)


def vox(ls, us, ld=-1.0, ud=1.0, lt=0.0, ut=1.0, lane=LaneLabel.CURRENT):
    return Voxel(ls, us, ld, ud, lt, ut, lane)


def graph_from_layers(layer_voxels):
    layers = []
    for i, voxels in enumerate(layer_voxels):
        layers.append([VoxelNode(v, i, j) for j, v in enumerate(voxels)])
    return VoxelGraph(layers=layers)


class TestModifySequence:
    def test_d_union_on_transition(self):
        a = vox(0.0, 50.0, ld=-1.0, ud=1.0, lt=0, ut=1, lane=LaneLabel.CURRENT)
        b = vox(20.0, 80.0, ld=3.0, ud=5.0, lt=1, ut=2, lane=LaneLabel.LEFT)
        graph = graph_from_layers([[a], [b]])
        out = modify_sequence_for_lane_change([a, b], graph)
        assert (out.voxels[0].ld, out.voxels[0].ud) == (-1.0, 5.0)
        assert (out.voxels[1].ld, out.voxels[1].ud) == (-1.0, 5.0)

    def test_single_candidate_intersection(self):
        a = vox(0.0, 50.0, lt=0, ut=1, lane=LaneLabel.CURRENT)           # transition voxel
        nxt_same = vox(10.0, 40.0, lt=1, ut=2, lane=LaneLabel.CURRENT)   # same-lane voxel, next layer
        b = vox(5.0, 80.0, ld=3.0, ud=5.0, lt=1, ut=2, lane=LaneLabel.LEFT)
        prev_same = vox(0.0, 60.0, ld=3.0, ud=5.0, lt=0, ut=1, lane=LaneLabel.LEFT)
        graph = graph_from_layers([[a, prev_same], [nxt_same, b]])
        out = modify_sequence_for_lane_change([a, b], graph)
        assert (out.voxels[0].ls, out.voxels[0].us) == (10.0, 40.0)
        assert (out.voxels[1].ls, out.voxels[1].us) == (5.0, 60.0)

    def test_empty_intersection_flagged(self):
        a = vox(0.0, 20.0, lt=0, ut=1, lane=LaneLabel.CURRENT)
        b = vox(10.0, 80.0, ld=3.0, ud=5.0, lt=1, ut=2, lane=LaneLabel.LEFT)
        far = vox(60.0, 90.0, lt=1, ut=2, lane=LaneLabel.CURRENT)  # no overlap with a
        graph = graph_from_layers([[a], [far, b]])
        out = modify_sequence_for_lane_change([a, b], graph)
        assert out.empty_intersection
        assert (out.voxels[0].ls, out.voxels[0].us) == (0.0, 20.0)
        assert (out.voxels[0].ld, out.voxels[0].ud) == (-1.0, 5.0)

    def test_no_transition_raises_for_lane_keep(self):
        a = vox(0.0, 20.0, lt=0, ut=1)
        b = vox(5.0, 30.0, lt=1, ut=2)
        graph = graph_from_layers([[a], [b]])
        with pytest.raises(NoTransition):
            modify_sequence_for_lane_change([a, b], graph)

    def test_already_in_target_lane_unmodified(self):
        a = vox(0.0, 20.0, ld=3.0, ud=5.0, lt=0, ut=1, lane=LaneLabel.LEFT)
        b = vox(5.0, 30.0, ld=3.0, ud=5.0, lt=1, ut=2, lane=LaneLabel.LEFT)
        graph = graph_from_layers([[a], [b]])
        out = modify_sequence_for_lane_change([a, b], graph)
        assert out.voxels == [a, b]

    def test_chain_breaking_substitution_reverted(self):
        # next-layer same-lane voxel sits far ahead: substituting would break
        # the chain with the predecessor, so only the d-union applies there
        root = vox(0.0, 12.0, lt=0, ut=1, lane=LaneLabel.CURRENT)
        a = vox(8.0, 30.0, lt=1, ut=2, lane=LaneLabel.CURRENT)
        ahead = vox(28.0, 60.0, lt=2, ut=3, lane=LaneLabel.CURRENT)
        b = vox(25.0, 80.0, ld=3.0, ud=5.0, lt=2, ut=3, lane=LaneLabel.LEFT)
        prev_same = vox(20.0, 70.0, ld=3.0, ud=5.0, lt=1, ut=2, lane=LaneLabel.LEFT)
        graph = graph_from_layers([[root], [a, prev_same], [ahead, b]])
        out = modify_sequence_for_lane_change([root, a, b], graph)
        # substitution for `a` would be [28, 30], breaking overlap with root
        assert (out.voxels[1].ls, out.voxels[1].us) == (8.0, 30.0)
        assert out.voxels[1].ud == 5.0


def scene_with(agents, v0=10.0, d0=0.0):
    return make_scene(straight_lanes(), FrenetState(50.0, d0, v0, 0.0), agents=agents)


class TestIdealEndStates:
    def test_fast_front_agent_braking_target(self):
        # front agent faster than ego: gamma_f lands inside the voxel and the
        # hand-evaluated braking-distance rule applies unclamped:
        # gamma_f = s_f + (v0^2 - v_f^2) / (2 a) - v0 T_res
        front = Agent("f", FrenetState(90.0, 0.0, 8.0, 0.0), 4.5, 2.0, LaneLabel.CURRENT)
        scene = scene_with([front], v0=10.0)
        voxel = vox(30.0, 86.75, lt=0.0, ut=1.0)
        ideals = ideal_end_states([voxel], scene, W, LIM)
        s_f = 90.0  # position at lt = 0
        gamma_f = s_f - (10.0**2 - 8.0**2) / (2.0 * 2.0) - 10.0 * 1.0
        assert gamma_f == pytest.approx(71.0)
        assert ideals.alpha_s[0] == pytest.approx(gamma_f)
        assert ideals.beta_s[0] == pytest.approx(8.0)

    def test_blend_with_rear_agent(self):
        front = Agent("f", FrenetState(90.0, 0.0, 8.0, 0.0), 4.5, 2.0, LaneLabel.CURRENT)
        rear = Agent("r", FrenetState(20.0, 0.0, 15.0, 0.0), 4.5, 2.0, LaneLabel.CURRENT)
        scene = scene_with([front, rear], v0=10.0)
        voxel = vox(40.0, 86.75, lt=0.0, ut=1.0)
        ideals = ideal_end_states([voxel], scene, W, LIM)
        gamma_f = 90.0 - (100.0 - 64.0) / 4.0 - 10.0
        s_r = 20.0 + 15.0 * 1.0  # rear position at ut
        gamma_r = s_r + (225.0 - 100.0) / 4.0 + 15.0 * (1.0 + 1.0)
        assert gamma_r > gamma_f
        blended = 0.5 * (gamma_f + gamma_r)
        assert ideals.alpha_s[0] == pytest.approx(min(blended, 86.75))

    def test_braking_target_clamped_into_voxel(self):
        front = Agent("f", FrenetState(50.0, 0.0, 9.9, 0.0), 4.5, 2.0, LaneLabel.CURRENT)
        scene = scene_with([front], v0=0.5)
        us = 50.0 - 2.25 - 1.0  # voxel carved at the agent's occupancy
        voxel = vox(40.0, us, lt=0.0, ut=1.0)
        ideals = ideal_end_states([voxel], scene, W, LIM)
        # slow ego behind a fast leader: the raw target lands past the voxel
        gamma_f = 50.0 - (0.5**2 - 9.9**2) / 4.0 - 0.5
        assert gamma_f > us
        assert ideals.alpha_s[0] == pytest.approx(us)

    def test_no_front_agent_upper_bound_and_speed_cap(self):
        scene = scene_with([], v0=10.0)
        voxel = vox(50.0, 120.0, lt=0.0, ut=1.0)
        ideals = ideal_end_states([voxel], scene, W, LIM)
        assert ideals.alpha_s[0] == pytest.approx(120.0)
        assert ideals.beta_s[0] == pytest.approx(19.75)  # capped target, slight backoff
        assert ideals.beta_d[0] == 0.0

    def test_lane_center_lateral_target(self):
        scene = scene_with([], v0=10.0)
        left = vox(50.0, 120.0, ld=3.0, ud=5.0, lane=LaneLabel.LEFT)
        ideals = ideal_end_states([left], scene, W, LIM)
        assert ideals.alpha_d[0] == pytest.approx(4.0)

    def test_empty_sequence(self):
        with pytest.raises(EmptySequence):
            ideal_end_states([], scene_with([]), W, LIM)


def empty_road_sequence(n=5, v0=10.0):
    scene = make_scene(straight_lanes(), FrenetState(50.0, 0.0, v0, 0.0))
    partition = make_partition(6.0, n, 1.2)
    voxels = generate_voxels(scene, partition, LIM)
    graph = build_graph(voxels, THR, LIM)
    sequence = search(graph, Behavior.LANE_KEEP)
    return scene, partition, sequence


class TestAssemble:
    def test_equality_row_counts(self):
        scene, partition, sequence = empty_road_sequence()
        ideals = ideal_end_states(sequence, scene, W, LIM)
        p1 = assemble(sequence[:1], scene.ego.state, ideals, W, LIM, partition)
        assert p1.A_eq.shape[0] == 6
        ideals3 = ideal_end_states(sequence[:3], scene, W, LIM)
        p3 = assemble(sequence[:3], scene.ego.state, ideals3, W, LIM, partition)
        assert p3.A_eq.shape[0] == 18

    def test_inequality_row_counts(self):
        scene, partition, sequence = empty_road_sequence()
        ideals = ideal_end_states(sequence, scene, W, LIM)
        problem = assemble(sequence, scene.ego.state, ideals, W, LIM, partition)
        assert problem.A_in.shape == (5 * 36, 60)

    def test_objective_matches_quadrature(self):
        rng = np.random.default_rng(31)
        scene, partition, sequence = empty_road_sequence(n=3)
        ideals = ideal_end_states(sequence, scene, W, LIM)
        problem = assemble(sequence, scene.ego.state, ideals, W, LIM, partition)
        for _ in range(5):
            x = rng.uniform(-5.0, 5.0, problem.dimension)
            total = 0.0
            for i, voxel in enumerate(sequence):
                dt = voxel.dt
                ps = x[12 * i : 12 * i + 6] / dt
                pd = x[12 * i + 6 : 12 * i + 12] / dt
                seg = BezierSegment(ps, pd, voxel.lt, voxel.ut)
                for axis in ("s", "d"):
                    jerk_sq = quad(lambda t: evaluate(seg, t, axis, 3) ** 2, voxel.lt, voxel.ut, limit=200)[0]
                    total += W.w_jerk * jerk_sq
                total += W.w_lateral_velocity * quad(
                    lambda t: evaluate(seg, t, "d", 1) ** 2, voxel.lt, voxel.ut, limit=200
                )[0]
                total += W.w_longitudinal_accel * quad(
                    lambda t: evaluate(seg, t, "s", 2) ** 2, voxel.lt, voxel.ut, limit=200
                )[0]
                end_s = evaluate(seg, voxel.ut, "s", 0)
                end_d = evaluate(seg, voxel.ut, "d", 0)
                total += W.w_end_position * ((end_s - ideals.alpha_s[i]) ** 2 + (end_d - ideals.alpha_d[i]) ** 2)
                vend_s = evaluate(seg, voxel.ut, "s", 1)
                vend_d = evaluate(seg, voxel.ut, "d", 1)
                total += W.w_end_velocity * ((vend_s - ideals.beta_s[i]) ** 2 + (vend_d - ideals.beta_d[i]) ** 2)
            constant = W.w_end_position * float(
                np.sum(ideals.alpha_s**2) + np.sum(ideals.alpha_d**2)
            ) + W.w_end_velocity * float(np.sum(ideals.beta_s**2) + np.sum(ideals.beta_d**2))
            assert problem.objective_value(x) == pytest.approx(total - constant, rel=1e-6)

    def test_stationary_ego_symmetric_corridor_constant_optimum(self):
        lanes = straight_lanes()
        scene = make_scene(lanes, FrenetState(50.0, 0.0, 0.0, 0.0))
        partition = make_partition(4.0, 3, 1.0)
        # symmetric corridor around the ego; no position/velocity targets
        weights = ObjectiveWeights(w_end_position=0.0, w_end_velocity=0.0)
        sequence = [
            vox(30.0, 70.0, ld=-1.0, ud=1.0, lt=partition.lt(i), ut=partition.ut(i))
            for i in range(3)
        ]
        ideals = ideal_end_states(sequence, scene, weights, LIM)
        problem = assemble(sequence, scene.ego.state, ideals, weights, LIM, partition)
        solution = solve(problem)
        trajectory = trajectory_from_solution(sequence, solution.x)
        for t in np.linspace(0.0, 4.0, 17):
            assert trajectory.value(t, "s") == pytest.approx(50.0, abs=1e-6)
            assert trajectory.value(t, "d") == pytest.approx(0.0, abs=1e-6)


class TestVerify:
    def solved_trajectory(self):
        scene, partition, sequence = empty_road_sequence()
        ideals = ideal_end_states(sequence, scene, W, LIM)
        problem = assemble(sequence, scene.ego.state, ideals, W, LIM, partition)
        solution = solve(problem, x0=warm_start_seed(sequence, scene.ego.state))
        return trajectory_from_solution(sequence, solution.x), sequence

    def test_optimizer_output_passes(self):
        trajectory, sequence = self.solved_trajectory()
        assert verify(trajectory, sequence, LIM) == []

    def test_lateral_exit_detected(self):
        sequence = [vox(0.0, 200.0, ld=-1.0, ud=1.0, lt=0.0, ut=2.0)]
        # drifts laterally out of the voxel midway
        ps = np.linspace(0.0, 20.0, 6) / 2.0
        pd = np.array([0.0, 0.0, 2.0, 2.0, 2.0, 2.0]) / 2.0
        trajectory = PiecewiseBezier((BezierSegment(ps, pd, 0.0, 2.0),))
        violations = verify(trajectory, sequence, LIM)
        assert violations and any(v.kind == "d above voxel" for v in violations)
        assert all(v.time > 0 for v in violations)

    def test_jerk_violation_detected(self):
        sequence = [vox(-100.0, 200.0, ld=-50.0, ud=50.0, lt=0.0, ut=1.0)]
        # jerk 2.5 > 2.0 while |a| stays within 1.25 and v stays positive
        ts = np.linspace(0.0, 1.0, 30)
        values = 1.0 * ts - 0.625 * ts**2 + 2.5 / 6.0 * ts**3
        from test_bezier import fit_quintic_to_samples

        ps = fit_quintic_to_samples(ts, values, 0.0, 1.0)
        trajectory = PiecewiseBezier((BezierSegment(ps, np.zeros(6), 0.0, 1.0),))
        violations = verify(trajectory, sequence, LIM)
        assert any(v.kind == "j_s high" for v in violations)


class TestOptimizeWithRetry:
    def test_feasible_corridor_first_attempt(self):
        scene, partition, sequence = empty_road_sequence()
        trajectory, final = optimize_with_retry(
            sequence, scene.ego.state, scene, W, LIM, partition
        )
        assert len(final) == 5
        assert trajectory.t_end == pytest.approx(6.0)

    def test_unreachable_tail_dropped(self):
        scene, partition, sequence = empty_road_sequence()
        bad_tail = Voxel(
            sequence[-1].us + 50.0,
            sequence[-1].us + 80.0,
            sequence[-1].ld,
            sequence[-1].ud,
            sequence[-1].lt,
            sequence[-1].ut,
            sequence[-1].lane,
        )
        seq = sequence[:-1] + [bad_tail]
        trajectory, final = optimize_with_retry(seq, scene.ego.state, scene, W, LIM, partition)
        assert len(final) == 4

    def test_all_attempts_fail_with_reasons(self):
        scene, partition, sequence = empty_road_sequence()
        # disjoint boxes make continuity impossible at any length >= 2
        seq = []
        for i, v in enumerate(sequence):
            lo = 50.0 + 100.0 * i if i else v.ls
            hi = lo + 6.0 if i else v.us
            seq.append(Voxel(lo, hi, v.ld, v.ud, v.lt, v.ut, v.lane))
        with pytest.raises(OptimizationFailed) as err:
            optimize_with_retry(seq, scene.ego.state, scene, W, LIM, partition, min_segments=2)
        assert len(err.value.reasons) == 4  # 5, 4, 3, 2 segments

    def test_first_voxel_excluding_ego_fails_fast(self):
        scene, partition, sequence = empty_road_sequence()
        head = Voxel(200.0, 250.0, -1.0, 1.0, sequence[0].lt, sequence[0].ut, LaneLabel.CURRENT)
        with pytest.raises(OptimizationFailed) as err:
            optimize_with_retry([head] + sequence[1:], scene.ego.state, scene, W, LIM, partition)
        assert len(err.value.reasons) == 1

    def test_initial_state_and_continuity(self):
        front = Agent("f", FrenetState(110.0, 0.0, 8.0, 0.0), 4.5, 2.0, LaneLabel.CURRENT)
        scene = make_scene(straight_lanes(), FrenetState(50.0, 0.3, 12.0, -0.2, 0.5, 0.1), agents=[front])
        partition = make_partition(6.0, 5, 1.2)
        voxels = generate_voxels(scene, partition, LIM)
        graph = build_graph(voxels, THR, LIM)
        sequence = search(graph, Behavior.LANE_KEEP)
        trajectory, final = optimize_with_retry(sequence, scene.ego.state, scene, W, LIM, partition)
        ego = scene.ego.state
        assert trajectory.value(0.0, "s") == pytest.approx(ego.s, abs=1e-6)
        assert trajectory.value(0.0, "d") == pytest.approx(ego.d, abs=1e-6)
        assert trajectory.value(0.0, "s", 1) == pytest.approx(ego.v_s, abs=1e-6)
        assert trajectory.value(0.0, "d", 1) == pytest.approx(ego.v_d, abs=1e-6)
        assert trajectory.value(0.0, "s", 2) == pytest.approx(ego.a_s, abs=1e-6)
        assert trajectory.value(0.0, "d", 2) == pytest.approx(ego.a_d, abs=1e-6)
        for a, b in zip(trajectory.segments, trajectory.segments[1:]):
            t = a.ut
            for axis in ("s", "d"):
                for order in (0, 1, 2):
                    assert evaluate(a, t, axis, order) == pytest.approx(
                        evaluate(b, t, axis, order), abs=1e-6
                    )

    def test_jerk_weight_reduces_peak_jerk(self):
        lanes = straight_lanes()
        scene = make_scene(lanes, FrenetState(50.0, 0.0, 10.0, 0.0, 1.0, 0.0))
        partition = make_partition(6.0, 5, 1.2)
        voxels = generate_voxels(scene, partition, LIM)
        graph = build_graph(voxels, THR, LIM)
        sequence = search(graph, Behavior.LANE_KEEP)

        def peak_jerk(weights):
            trajectory, _ = optimize_with_retry(
                sequence, scene.ego.state, scene, weights, LIM, partition
            )
            cols = trajectory.profile(0.02)
            return max(np.abs(cols["j_s"]).max(), np.abs(cols["j_d"]).max())

        jerk_weighted = peak_jerk(ObjectiveWeights(w_jerk=1.0, w_end_position=0.0, w_end_velocity=0.0, w_lateral_velocity=0.0, w_longitudinal_accel=0.0))
        accel_weighted = peak_jerk(ObjectiveWeights(w_jerk=0.0, w_end_position=0.0, w_end_velocity=0.0, w_lateral_velocity=0.0, w_longitudinal_accel=1.0))
        assert jerk_weighted < accel_weighted
