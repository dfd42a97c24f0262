"""Time partitioning and free spatio-temporal voxel generation.

The planning horizon is split into monotonically non-decreasing time
segments; for every (lane, segment) cell the reachable longitudinal range
minus predicted agent occupancy yields the free ranges, which combined with
the lane's usable lateral band become axis-aligned voxels in (s, d, t).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import KinodynamicLimits
from .errors import EmptyBand, InvalidConfig
from .scene import (
    LANE_ORDER,
    DEFAULT_OCCUPANCY_MARGIN,
    DEFAULT_SENSING_RANGE,
    DEFAULT_STRADDLE_TOL,
    FrenetState,
    LaneLabel,
    LaneModel,
    Scene,
    predict_occupancy,
    related_agents,
)

DEFAULT_MAX_VOXELS_PER_CELL = 4
DEFAULT_MIN_RANGE_EXTRA = 2.0


@dataclass(frozen=True)
class TimePartition:
    """Horizon split into segments with exactly chained boundaries."""

    segments: np.ndarray   # per-segment durations, non-decreasing
    boundaries: np.ndarray  # n + 1 instants, boundaries[0] == 0

    @property
    def n(self) -> int:
        return len(self.segments)

    @property
    def horizon(self) -> float:
        return float(self.boundaries[-1])

    def lt(self, i: int) -> float:
        return float(self.boundaries[i])

    def ut(self, i: int) -> float:
        return float(self.boundaries[i + 1])


@dataclass(frozen=True)
class Voxel:
    """Axis-aligned free box in (s, d, t), tagged with its lane."""

    ls: float
    us: float
    ld: float
    ud: float
    lt: float
    ut: float
    lane: LaneLabel

    def __post_init__(self):
        if not (self.ls < self.us and self.ld < self.ud and self.lt < self.ut):
            raise ValueError(f"degenerate voxel bounds: {self}")

    @property
    def dt(self) -> float:
        return self.ut - self.lt

    def s_overlap(self, other: "Voxel") -> float:
        return min(self.us, other.us) - max(self.ls, other.ls)

    def d_overlap(self, other: "Voxel") -> float:
        return min(self.ud, other.ud) - max(self.ld, other.ld)

    def contains(self, s: float, d: float, tol: float = 1e-9) -> bool:
        return (
            self.ls - tol <= s <= self.us + tol
            and self.ld - tol <= d <= self.ud + tol
        )


@dataclass(frozen=True)
class VoxelSet:
    """Voxels grouped by (segment index, lane); each cell sorted by ls."""

    partition: TimePartition
    by_segment_and_lane: dict

    def cell(self, segment: int, lane: LaneLabel) -> list[Voxel]:
        return self.by_segment_and_lane.get((segment, lane), [])

    def layer(self, segment: int) -> list[Voxel]:
        out = []
        for lane in LANE_ORDER:
            out.extend(self.cell(segment, lane))
        return out


def make_partition(horizon: float, n: int, growth: float) -> TimePartition:
    """Geometric segment schedule rescaled to sum to the horizon."""
    if horizon <= 0.0:
        raise InvalidConfig(f"horizon must be positive, got {horizon}")
    if n < 1:
        raise InvalidConfig(f"segment count must be >= 1, got {n}")
    if growth < 1.0:
        raise InvalidConfig(f"growth must be >= 1 to keep segments non-decreasing, got {growth}")
    raw = np.power(growth, np.arange(n, dtype=float))
    segments = raw * (horizon / raw.sum())
    boundaries = np.concatenate(([0.0], np.cumsum(segments)))
    return TimePartition(segments=segments, boundaries=boundaries)


def reachable_s_bounds(
    ego: FrenetState,
    lt: float,
    ut: float,
    limits: KinodynamicLimits,
) -> tuple[float, float]:
    """Longitudinal interval reachable during [lt, ut].

    The lower bound brakes at maximum deceleration for lt (clamped at
    standstill); the upper bound accelerates at maximum acceleration for ut
    (clamped at the velocity cap).
    """
    if not 0.0 <= lt <= ut:
        raise ValueError(f"need 0 <= lt <= ut, got [{lt}, {ut}]")
    decel = abs(limits.a_s_min)
    if decel > 0.0 and ego.v_s > decel * lt:
        s_min = ego.s + ego.v_s * lt - 0.5 * decel * lt * lt
    elif decel > 0.0:
        s_min = ego.s + ego.v_s**2 / (2.0 * decel)  # stops before lt
    else:
        s_min = ego.s + ego.v_s * lt

    accel = limits.a_s_max
    t_cap = (limits.v_s_max - ego.v_s) / accel if accel > 0.0 else float("inf")
    t_cap = max(t_cap, 0.0)
    if ut <= t_cap:
        s_max = ego.s + ego.v_s * ut + 0.5 * accel * ut * ut
    else:
        s_max = (
            ego.s
            + ego.v_s * t_cap
            + 0.5 * accel * t_cap * t_cap
            + limits.v_s_max * (ut - t_cap)
        )
    return s_min, s_max


def _subtract_intervals(
    base: tuple[float, float], holes: list[tuple[float, float]]
) -> list[tuple[float, float]]:
    lo, hi = base
    if hi <= lo:
        return []
    out = []
    cursor = lo
    for h_lo, h_hi in sorted(holes):
        if h_hi <= cursor or h_lo >= hi:
            continue
        if h_lo > cursor:
            out.append((cursor, min(h_lo, hi)))
        cursor = max(cursor, h_hi)
        if cursor >= hi:
            break
    if cursor < hi:
        out.append((cursor, hi))
    return out


def free_ranges(
    lane: LaneLabel,
    segment: int,
    scene: Scene,
    partition: TimePartition,
    limits: KinodynamicLimits,
    *,
    occupancy_margin: float = DEFAULT_OCCUPANCY_MARGIN,
    sensing_range: float = DEFAULT_SENSING_RANGE,
    straddle_tol: float = DEFAULT_STRADDLE_TOL,
    min_range_extra: float = DEFAULT_MIN_RANGE_EXTRA,
    max_ranges: int = DEFAULT_MAX_VOXELS_PER_CELL,
) -> list[tuple[float, float]]:
    """Free longitudinal ranges on the lane during the given time segment.

    Reachable bounds minus the union of predicted agent occupancy.  Gaps
    strictly between two occupancy intervals that are too short to hold the
    ego are dropped (ranges touching the reachability envelope are virtual
    bounds, not physical slots, and always survive); at most ``max_ranges``
    of the largest survivors are kept (returned sorted by lower bound).
    """
    if not 0 <= segment < partition.n:
        raise ValueError(f"segment {segment} outside partition of {partition.n}")
    lt, ut = partition.lt(segment), partition.ut(segment)
    bounds = reachable_s_bounds(scene.ego.state, lt, ut, limits)
    agents = related_agents(scene, lane, sensing_range, straddle_tol)
    holes = [predict_occupancy(a, lt, ut, occupancy_margin) for a in agents]
    ranges = _subtract_intervals(bounds, holes)
    min_len = scene.ego.length + min_range_extra
    ranges = [
        r
        for r in ranges
        if r[1] - r[0] >= min_len
        or r[0] <= bounds[0] + 1e-9
        or r[1] >= bounds[1] - 1e-9
    ]
    if len(ranges) > max_ranges:
        ranges = sorted(ranges, key=lambda r: (r[1] - r[0], r[0]), reverse=True)[:max_ranges]
        ranges.sort(key=lambda r: r[0])
    return ranges


def lateral_bounds(
    lane: LaneLabel,
    ego: FrenetState,
    partition_segment: tuple[float, float],
    lanes: LaneModel,
    limits: KinodynamicLimits,
    ego_width: float,
) -> tuple[float, float]:
    """Usable d-band of the lane during the given time segment.

    Adjacent lanes keep their full band shrunk by half the ego width per
    side.  The current lane is additionally clipped to the laterally
    reachable interval, and for the first segment widened to contain the
    ego's present offset so that replanning mid-manoeuvre stays feasible.
    """
    lt, ut = partition_segment
    lo, hi = lanes.band(lane)
    half = 0.5 * ego_width
    lo += half
    hi -= half
    if lo >= hi:
        raise EmptyBand(f"ego width {ego_width} leaves no room in a {lanes.lane_width} m lane")
    if lane is LaneLabel.CURRENT:
        a_max = limits.a_d_max
        reach_lo = ego.d + ego.v_d * lt - 0.5 * a_max * ut * ut
        reach_hi = ego.d + ego.v_d * ut + 0.5 * a_max * ut * ut
        lo = max(lo, reach_lo)
        hi = min(hi, reach_hi)
        if lt == 0.0:
            lo = min(lo, ego.d)
            hi = max(hi, ego.d)
        # Recovery funnel: lateral motion in progress cannot stop instantly
        # (jerk-limited braking), so early segments must admit the overshoot
        # or an aborted lane change leaves no feasible lane-keep corridor.
        if ego.v_d != 0.0:
            ramp = a_max / max(limits.j_d_max, 1e-6)
            overshoot = abs(ego.v_d) * ramp + ego.v_d**2 / (2.0 * a_max)
            stop_time = ramp + abs(ego.v_d) / a_max
            if lt < stop_time:
                if ego.v_d > 0.0:
                    hi = max(hi, ego.d + overshoot)
                    lo = min(lo, ego.d)
                else:
                    lo = min(lo, ego.d - overshoot)
                    hi = max(hi, ego.d)
        if lo >= hi:
            raise EmptyBand(
                f"reachable lateral range [{reach_lo:.2f}, {reach_hi:.2f}] misses the lane band"
            )
    return lo, hi


def generate_voxels(
    scene: Scene,
    partition: TimePartition,
    limits: KinodynamicLimits,
    *,
    occupancy_margin: float = DEFAULT_OCCUPANCY_MARGIN,
    sensing_range: float = DEFAULT_SENSING_RANGE,
    straddle_tol: float = DEFAULT_STRADDLE_TOL,
    min_range_extra: float = DEFAULT_MIN_RANGE_EXTRA,
    max_voxels_per_cell: int = DEFAULT_MAX_VOXELS_PER_CELL,
) -> VoxelSet:
    """All free voxels over the horizon; cells may be empty under traffic."""
    cells: dict = {}
    for i in range(partition.n):
        lt, ut = partition.lt(i), partition.ut(i)
        for lane in LANE_ORDER:
            if not scene.lanes.has_lane(lane):
                continue
            try:
                ld, ud = lateral_bounds(
                    lane, scene.ego.state, (lt, ut), scene.lanes, limits, scene.ego.width
                )
            except EmptyBand:
                continue
            ranges = free_ranges(
                lane,
                i,
                scene,
                partition,
                limits,
                occupancy_margin=occupancy_margin,
                sensing_range=sensing_range,
                straddle_tol=straddle_tol,
                min_range_extra=min_range_extra,
                max_ranges=max_voxels_per_cell,
            )
            if ranges:
                cells[(i, lane)] = [
                    Voxel(ls, us, ld, ud, lt, ut, lane) for ls, us in ranges
                ]
    return VoxelSet(partition=partition, by_segment_and_lane=cells)
