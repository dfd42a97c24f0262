"""Turns a voxel sequence into a convex QP, solves, verifies, and retries.

Optimization variables are the 12 control points per segment (6 per axis).
Equality rows pin the initial state and chain position, velocity, and
acceleration at every knot; inequality rows confine the physical position
control points (span-scaled) to the voxel boxes and the derivative control
points to the kinodynamic envelopes.  The integral objective terms use the
exact Gram matrices of Bernstein products, so no quadrature error enters
the Hessian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .bezier import DIFF_1, DIFF_2, DIFF_3, BezierSegment, PiecewiseBezier
from .config import KinodynamicLimits, ObjectiveWeights
from .errors import EmptySequence, NoTransition, NumericalBreakdown, OptimizationFailed
from .qp_solver import QpOptions, QpProblem, SolveStatus, solve
from .scene import LaneLabel, Scene, predict_occupancy, related_agents
from .voxelizer import TimePartition, Voxel
from .voxel_graph import VoxelGraph, edge_cost, VoxelNode

__all__ = [
    "KinodynamicLimits",
    "ObjectiveWeights",
    "IdealEndStates",
    "SequenceChange",
    "Violation",
    "modify_sequence_for_lane_change",
    "ideal_end_states",
    "assemble",
    "trajectory_from_solution",
    "verify",
    "optimize_with_retry",
]

VERIFY_SAMPLE_DT = 0.02
VERIFY_TOL = 1e-4
MAX_REPORTED_VIOLATIONS = 10


def _bernstein_gram(degree: int) -> np.ndarray:
    """Exact integrals of Bernstein basis products over the unit interval."""
    g = np.empty((degree + 1, degree + 1))
    for i in range(degree + 1):
        for j in range(degree + 1):
            g[i, j] = (
                math.comb(degree, i)
                * math.comb(degree, j)
                / math.comb(2 * degree, i + j)
                / (2 * degree + 1)
            )
    return g

GRAM_2 = _bernstein_gram(2)
GRAM_3 = _bernstein_gram(3)
GRAM_4 = _bernstein_gram(4)

#: Quadratic forms (unit span) reused for every segment.
_Q_JERK = DIFF_3.T @ GRAM_2 @ DIFF_3
_Q_ACCEL = DIFF_2.T @ GRAM_3 @ DIFF_2
_Q_VEL = DIFF_1.T @ GRAM_4 @ DIFF_1

_E0 = np.eye(6)[0]
_E5 = np.eye(6)[5]
_E5_OUTER = np.outer(_E5, _E5)


@lru_cache(maxsize=64)
def _segment_templates(dt: float):
    """Per-span constant blocks of the assembled QP, cached across episodes."""
    v_end = DIFF_1[4] / dt
    return {
        "q_jerk": _Q_JERK / dt**5,
        "q_vel": _Q_VEL / dt,
        "q_accel": _Q_ACCEL / dt**3,
        "v_end": v_end,
        "v_end_outer": np.outer(v_end, v_end),
        "vel_rows": DIFF_1 / dt,
        "acc_rows": DIFF_2 / dt**2,
        "jerk_rows": DIFF_3 / dt**3,
    }


@dataclass(frozen=True)
class IdealEndStates:
    """Per-segment target end positions and velocities for both axes."""

    alpha_s: np.ndarray
    alpha_d: np.ndarray
    beta_s: np.ndarray
    beta_d: np.ndarray


@dataclass(frozen=True)
class SequenceChange:
    voxels: list
    empty_intersection: bool = False


@dataclass(frozen=True)
class Violation:
    time: float
    kind: str
    value: float
    bound: float

    def __str__(self):
        return f"{self.kind} at t={self.time:.2f}: {self.value:.4f} vs bound {self.bound:.4f}"


def _max_intersection(voxel: Voxel, candidates: list[Voxel]) -> tuple[float, float] | None:
    best = None
    for cand in candidates:
        lo = max(voxel.ls, cand.ls)
        hi = min(voxel.us, cand.us)
        if hi <= lo:
            continue
        key = (hi - lo, hi, lo)
        if best is None or key > best[0]:
            best = (key, (lo, hi))
    return None if best is None else best[1]


def modify_sequence_for_lane_change(
    sequence: list[Voxel], graph: VoxelGraph, ego=None
) -> SequenceChange:
    """Widen the transition voxels so both lanes' traffic constrains them.

    The voxel before the lane switch keeps the largest s-range it shares
    with a same-lane voxel of the next layer (and vice versa), and both
    transition voxels take the union of their d-ranges so the trajectory
    can cross the lane boundary.  When the ego state is supplied, a
    substitution that would evict it from the first voxel is rolled back
    (the trajectory must start where the vehicle is).
    """
    lanes = [v.lane for v in sequence]
    transition = None
    for i, (a, b) in enumerate(zip(lanes, lanes[1:])):
        if a is not b:
            transition = i
            break
    if transition is None:
        if all(lane is LaneLabel.CURRENT for lane in lanes):
            raise NoTransition("sequence never leaves the current lane")
        return SequenceChange(voxels=list(sequence))  # already in the target lane

    i = transition
    before, after = sequence[i], sequence[i + 1]
    cand_next = [v.voxel for v in graph.layers[i + 1] if v.voxel.lane is before.lane]
    cand_prev = [v.voxel for v in graph.layers[i] if v.voxel.lane is after.lane]
    range_before = _max_intersection(before, cand_next)
    range_after = _max_intersection(after, cand_prev)

    # The lateral union is what lets the trajectory cross the lane marking;
    # it applies even when a longitudinal substitution is unavailable.
    ld = min(before.ld, after.ld)
    ud = max(before.ud, after.ud)
    out = list(sequence)
    out[i] = replace(before, ld=ld, ud=ud)
    out[i + 1] = replace(after, ld=ld, ud=ud)
    if range_before is None or range_after is None:
        return SequenceChange(voxels=out, empty_intersection=True)

    out[i] = replace(out[i], ls=range_before[0], us=range_before[1])
    out[i + 1] = replace(out[i + 1], ls=range_after[0], us=range_after[1])

    def chained(k: int) -> bool:
        ok = True
        if k > 0:
            ok = out[k].s_overlap(out[k - 1]) > 0
        if ok and k + 1 < len(out):
            ok = out[k].s_overlap(out[k + 1]) > 0
        return ok

    # A substituted range that breaks the chain guarantees an infeasible QP;
    # keep the original range on that side and rely on the lateral union.
    if not chained(i):
        out[i] = replace(before, ld=ld, ud=ud)
    if not chained(i + 1):
        out[i + 1] = replace(after, ld=ld, ud=ud)
    if i == 0 and ego is not None and not out[0].contains(ego.s, ego.d, tol=1e-9):
        out[0] = replace(before, ld=ld, ud=ud)
    return SequenceChange(voxels=out)


def _front_rear_agents(voxel: Voxel, scene: Scene, margin: float, sensing_range: float):
    """Nearest predicted occupancies ahead of and behind the voxel's s-range."""
    front = rear = None
    front_lo = rear_hi = None
    for agent in related_agents(scene, voxel.lane, sensing_range):
        lo, hi = predict_occupancy(agent, voxel.lt, voxel.ut, margin)
        if lo >= voxel.us - 1e-6:
            if front_lo is None or lo < front_lo:
                front, front_lo = agent, lo
        elif hi <= voxel.ls + 1e-6:
            if rear_hi is None or hi > rear_hi:
                rear, rear_hi = agent, hi
    return front, rear


def ideal_end_states(
    sequence: list[Voxel],
    scene: Scene,
    weights: ObjectiveWeights,
    limits: KinodynamicLimits,
    *,
    occupancy_margin: float = 1.0,
    sensing_range: float = 100.0,
) -> IdealEndStates:
    """Target end states per segment from the bounding front/rear agents.

    The longitudinal target keeps a braking-consistent distance behind the
    front agent (blended with a rear-agent bound when both exist) and is
    clamped into the voxel; the lateral target is the segment lane's center.
    Velocity targets follow the front agent or the allowed velocity cap.
    """
    if not sequence:
        raise EmptySequence("cannot build end states for an empty sequence")
    n = len(sequence)
    alpha_s = np.empty(n)
    alpha_d = np.empty(n)
    beta_s = np.empty(n)
    beta_d = np.zeros(n)
    v0 = scene.ego.state.v_s
    # Slight backoff from the hard cap keeps successive replans from pinning
    # the initial state exactly on the velocity bound.
    v_cap = max(min(limits.v_s_max, scene.lanes.speed_limit) - 0.25, 0.0)
    brake = abs(limits.a_s_max)
    t_res = weights.response_time

    for i, voxel in enumerate(sequence):
        front, rear = _front_rear_agents(voxel, scene, occupancy_margin, sensing_range)
        if front is None:
            target = voxel.us
            beta_s[i] = v_cap
        else:
            v_f = front.state.v_s
            s_f = front.state.s + v_f * voxel.lt
            # Braking-consistency bound: after coasting for the response time
            # the ego must still out-brake the front agent, so the speed
            # difference term pulls the target back when the ego is faster.
            gamma_f = s_f - (v0**2 - v_f**2) / (2.0 * brake) - v0 * t_res
            if rear is None:
                target = gamma_f
            else:
                v_r = rear.state.v_s
                s_r = rear.state.s + v_r * voxel.ut
                gamma_r = s_r + (v_r**2 - v0**2) / (2.0 * brake) + v_r * (t_res + voxel.dt)
                if gamma_r <= gamma_f:
                    target = gamma_f
                else:
                    w_sum = weights.w_front + weights.w_rear
                    target = (weights.w_front * gamma_f + weights.w_rear * gamma_r) / w_sum
            beta_s[i] = v_f
        alpha_s[i] = min(max(target, voxel.ls), voxel.us)
        center = scene.lanes.center_offset(voxel.lane)
        alpha_d[i] = min(max(center, voxel.ld), voxel.ud)
    return IdealEndStates(alpha_s=alpha_s, alpha_d=alpha_d, beta_s=beta_s, beta_d=beta_d)


def assemble(
    sequence: list[Voxel],
    ego,
    ideals: IdealEndStates,
    weights: ObjectiveWeights,
    limits: KinodynamicLimits,
    partition: TimePartition | None = None,
) -> QpProblem:
    """Build the QP over 12 control points per segment.

    ``ego`` is the initial Frenet state.  The variables are the physical
    (span-multiplied) control points, so position rows are identity boxes;
    the stored per-segment control points are recovered by dividing by the
    span.  Equality rows: 6 for the initial configuration plus 6 per knot
    for position/velocity/acceleration continuity.  Inequality rows confine
    positions to the voxel boxes and derivative control points to the
    velocity, acceleration, and jerk envelopes.
    """
    n = len(sequence)
    if n == 0:
        raise EmptySequence("cannot assemble an empty sequence")
    dim = 12 * n

    def s_block(i):
        return slice(12 * i, 12 * i + 6)

    def d_block(i):
        return slice(12 * i + 6, 12 * i + 12)

    H = np.zeros((dim, dim))
    g = np.zeros(dim)
    e0 = _E0
    e5 = _E5

    for i, voxel in enumerate(sequence):
        tpl = _segment_templates(voxel.dt)
        block_s = (
            2.0 * weights.w_jerk * tpl["q_jerk"]
            + 2.0 * weights.w_longitudinal_accel * tpl["q_accel"]
            + 2.0 * weights.w_end_position * _E5_OUTER
            + 2.0 * weights.w_end_velocity * tpl["v_end_outer"]
        )
        block_d = (
            2.0 * weights.w_jerk * tpl["q_jerk"]
            + 2.0 * weights.w_lateral_velocity * tpl["q_vel"]
            + 2.0 * weights.w_end_position * _E5_OUTER
            + 2.0 * weights.w_end_velocity * tpl["v_end_outer"]
        )
        H[s_block(i), s_block(i)] = block_s
        H[d_block(i), d_block(i)] = block_d
        g[s_block(i)] = (
            -2.0 * weights.w_end_position * ideals.alpha_s[i] * e5
            - 2.0 * weights.w_end_velocity * ideals.beta_s[i] * tpl["v_end"]
        )
        g[d_block(i)] = (
            -2.0 * weights.w_end_position * ideals.alpha_d[i] * e5
            - 2.0 * weights.w_end_velocity * ideals.beta_d[i] * tpl["v_end"]
        )

    rows_eq = 6 + 6 * (n - 1)
    A_eq = np.zeros((rows_eq, dim))
    b_eq = np.zeros(rows_eq)
    dt0 = sequence[0].dt
    A_eq[0, s_block(0)] = e0
    b_eq[0] = ego.s
    A_eq[1, d_block(0)] = e0
    b_eq[1] = ego.d
    A_eq[2, s_block(0)] = DIFF_1[0] / dt0
    b_eq[2] = ego.v_s
    A_eq[3, d_block(0)] = DIFF_1[0] / dt0
    b_eq[3] = ego.v_d
    A_eq[4, s_block(0)] = DIFF_2[0] / dt0**2
    b_eq[4] = ego.a_s
    A_eq[5, d_block(0)] = DIFF_2[0] / dt0**2
    b_eq[5] = ego.a_d

    row = 6
    for i in range(n - 1):
        tpl_a = _segment_templates(sequence[i].dt)
        tpl_b = _segment_templates(sequence[i + 1].dt)
        for blk_a, blk_b in ((s_block(i), s_block(i + 1)), (d_block(i), d_block(i + 1))):
            A_eq[row, blk_a] = e5
            A_eq[row, blk_b] = -e0
            row += 1
            A_eq[row, blk_a] = tpl_a["vel_rows"][4]
            A_eq[row, blk_b] = -tpl_b["vel_rows"][0]
            row += 1
            A_eq[row, blk_a] = tpl_a["acc_rows"][3]
            A_eq[row, blk_b] = -tpl_b["acc_rows"][0]
            row += 1

    rows_in = n * (12 + 10 + 8 + 6)
    A_in = np.zeros((rows_in, dim))
    lb = np.empty(rows_in)
    ub = np.empty(rows_in)

    # The initial state pins the first velocity/acceleration control points;
    # when it sits on a bound (e.g. at the speed cap while still
    # accelerating) the conservative control-point box would be infeasible
    # even though the actual curve stays inside the envelope.  Widen exactly
    # to the pinned values; the sampled verification still vets the curve.
    pinned = {
        ("v", "s", 0): ego.v_s,
        ("v", "s", 1): ego.v_s + ego.a_s * dt0 / 4.0,
        ("v", "d", 0): ego.v_d,
        ("v", "d", 1): ego.v_d + ego.a_d * dt0 / 4.0,
        ("a", "s", 0): ego.a_s,
        ("a", "d", 0): ego.a_d,
    }

    def seg0_bounds(kind, axis, k, vmin, vmax):
        value = pinned.get((kind, axis, k))
        if value is None:
            return vmin, vmax
        return min(vmin, value), max(vmax, value)

    row = 0
    for i, voxel in enumerate(sequence):
        tpl = _segment_templates(voxel.dt)
        idx = np.arange(12 * i, 12 * i + 12)
        A_in[np.arange(row, row + 12), idx] = 1.0
        lb[row : row + 6], ub[row : row + 6] = voxel.ls, voxel.us
        lb[row + 6 : row + 12], ub[row + 6 : row + 12] = voxel.ld, voxel.ud
        row += 12
        for block, axis, vmin, vmax in (
            (s_block(i), "s", limits.v_s_min, limits.v_s_max),
            (d_block(i), "d", limits.v_d_min, limits.v_d_max),
        ):
            A_in[row : row + 5, block] = tpl["vel_rows"]
            for k in range(5):
                lo, hi = (vmin, vmax) if i else seg0_bounds("v", axis, k, vmin, vmax)
                lb[row + k], ub[row + k] = lo, hi
            row += 5
        for block, axis, amin, amax in (
            (s_block(i), "s", limits.a_s_min, limits.a_s_max),
            (d_block(i), "d", limits.a_d_min, limits.a_d_max),
        ):
            A_in[row : row + 4, block] = tpl["acc_rows"]
            for k in range(4):
                lo, hi = (amin, amax) if i else seg0_bounds("a", axis, k, amin, amax)
                lb[row + k], ub[row + k] = lo, hi
            row += 4
        for block, jmin, jmax in (
            (s_block(i), limits.j_s_min, limits.j_s_max),
            (d_block(i), limits.j_d_min, limits.j_d_max),
        ):
            A_in[row : row + 3, block] = tpl["jerk_rows"]
            lb[row : row + 3], ub[row : row + 3] = jmin, jmax
            row += 3

    return QpProblem(H=H, g=g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, lb=lb, ub=ub)


def warm_start_seed(sequence: list[Voxel], ego) -> np.ndarray:
    """Constant-velocity physical control points; a cheap ADMM warm start."""
    x = np.empty(12 * len(sequence))
    for i, voxel in enumerate(sequence):
        x[12 * i : 12 * i + 6] = ego.s + ego.v_s * np.linspace(voxel.lt, voxel.ut, 6)
        x[12 * i + 6 : 12 * i + 12] = ego.d
    return x


def trajectory_from_solution(sequence: list[Voxel], x: np.ndarray) -> PiecewiseBezier:
    """Physical control points back to span-scaled per-segment points."""
    segments = []
    for i, voxel in enumerate(sequence):
        segments.append(
            BezierSegment(
                control_points_s=x[12 * i : 12 * i + 6] / voxel.dt,
                control_points_d=x[12 * i + 6 : 12 * i + 12] / voxel.dt,
                lt=voxel.lt,
                ut=voxel.ut,
            )
        )
    return PiecewiseBezier(segments=tuple(segments))


def _restore_equalities(problem: QpProblem, x: np.ndarray) -> np.ndarray:
    """Minimal-norm correction of x onto the equality manifold."""
    if problem.A_eq.shape[0] == 0:
        return x
    r = problem.A_eq @ x - problem.b_eq
    if float(np.abs(r).max(initial=0.0)) <= 1e-10:
        return x
    correction, *_ = np.linalg.lstsq(problem.A_eq, r, rcond=None)
    return x - correction


def verify(
    trajectory: PiecewiseBezier,
    sequence: list[Voxel],
    limits: KinodynamicLimits,
    sample_dt: float = VERIFY_SAMPLE_DT,
    tol: float = VERIFY_TOL,
) -> list[Violation]:
    """Sampled feasibility check: voxel containment, envelopes, curvature.

    Returns an empty list when the trajectory is acceptable, otherwise the
    first few violations with timestamps.
    """
    cols = trajectory.profile(sample_dt)
    ts = cols["t"]
    inner = np.array([v.lt for v in sequence[1:]])
    seg_of = np.searchsorted(inner, ts, side="right")
    ls = np.array([v.ls for v in sequence])[seg_of]
    us = np.array([v.us for v in sequence])[seg_of]
    ld = np.array([v.ld for v in sequence])[seg_of]
    ud = np.array([v.ud for v in sequence])[seg_of]

    checks = [
        ("s below voxel", ls - cols["s"]),
        ("s above voxel", cols["s"] - us),
        ("d below voxel", ld - cols["d"]),
        ("d above voxel", cols["d"] - ud),
        ("v_s low", limits.v_s_min - cols["v_s"]),
        ("v_s high", cols["v_s"] - limits.v_s_max),
        ("v_d low", limits.v_d_min - cols["v_d"]),
        ("v_d high", cols["v_d"] - limits.v_d_max),
        ("a_s low", limits.a_s_min - cols["a_s"]),
        ("a_s high", cols["a_s"] - limits.a_s_max),
        ("a_d low", limits.a_d_min - cols["a_d"]),
        ("a_d high", cols["a_d"] - limits.a_d_max),
        ("j_s low", limits.j_s_min - cols["j_s"]),
        ("j_s high", cols["j_s"] - limits.j_s_max),
        ("j_d low", limits.j_d_min - cols["j_d"]),
        ("j_d high", cols["j_d"] - limits.j_d_max),
    ]
    violations: list[Violation] = []
    for kind, excess in checks:
        for idx in np.nonzero(excess > tol)[0]:
            violations.append(Violation(float(ts[idx]), kind, float(excess[idx]), tol))
            if len(violations) >= MAX_REPORTED_VIOLATIONS:
                return violations

    kappa = cols["kappa"]
    with np.errstate(invalid="ignore"):
        bad = np.nonzero(kappa > limits.curvature_max + tol)[0]
    for idx in bad:
        violations.append(
            Violation(float(ts[idx]), "curvature", float(kappa[idx]), limits.curvature_max)
        )
        if len(violations) >= MAX_REPORTED_VIOLATIONS:
            break
    return violations


def optimize_with_retry(
    sequence: list[Voxel],
    ego,
    scene: Scene,
    weights: ObjectiveWeights,
    limits: KinodynamicLimits,
    partition: TimePartition | None = None,
    *,
    qp_options: QpOptions | None = None,
    min_segments: int = 2,
    occupancy_margin: float = 1.0,
    sensing_range: float = 100.0,
    debug_sink=None,
):
    """Assemble/solve/verify, shedding the tail voxel after each failure.

    Returns (trajectory, final_sequence); raises OptimizationFailed carrying
    one reason per attempt once the sequence would shrink below
    ``min_segments``.
    """
    if not sequence:
        raise EmptySequence("empty voxel sequence")
    qp_options = qp_options or QpOptions()
    reasons: list[str] = []
    work = list(sequence)
    if work and not work[0].contains(ego.s, ego.d, tol=1e-9):
        # Truncation never repairs the first voxel; fail fast.
        raise OptimizationFailed(
            [f"first voxel excludes the initial state (s={ego.s:.2f}, d={ego.d:.2f})"]
        )
    previous_x: np.ndarray | None = None
    while len(work) >= min_segments:
        ideals = ideal_end_states(
            work,
            scene,
            weights,
            limits,
            occupancy_margin=occupancy_margin,
            sensing_range=sensing_range,
        )
        problem = assemble(work, ego, ideals, weights, limits, partition)
        label = f"{len(work)} segments"
        seed = (
            previous_x[: 12 * len(work)]
            if previous_x is not None
            else warm_start_seed(work, ego)
        )
        try:
            solution = solve(problem, qp_options, x0=seed)
        except NumericalBreakdown as exc:
            reasons.append(f"{label}: numerical breakdown ({exc})")
            work.pop()
            continue
        if solution.status is SolveStatus.INFEASIBLE:
            reasons.append(f"{label}: solver status {solution.status.value}")
            work.pop()
            continue
        previous_x = solution.x
        # A MaxIterations point may still verify; the sampled check decides.
        x = _restore_equalities(problem, solution.x)
        trajectory = trajectory_from_solution(work, x)
        violations = verify(trajectory, work, limits)
        if debug_sink is not None:
            debug_sink(
                {
                    "segments": len(work),
                    "status": solution.status.value,
                    "objective": solution.objective,
                    "violations": [str(v) for v in violations],
                }
            )
        if not violations:
            return trajectory, work
        reasons.append(f"{label}: verification failed ({violations[0]})")
        work.pop()
    raise OptimizationFailed(reasons)
