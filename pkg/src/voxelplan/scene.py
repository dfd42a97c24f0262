"""Lane model, Frenet-frame conversion, and agent occupancy prediction.

The lateral axis d is positive to the LEFT of the reference line; this sign
convention is fixed repo-wide.  Lane indices count from the rightmost lane,
so the lane with index ``current_index + 1`` is the left neighbour.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import AmbiguousProjection, InvalidLane, OutOfRange

DEFAULT_SENSING_RANGE = 100.0
DEFAULT_OCCUPANCY_MARGIN = 1.0
DEFAULT_STRADDLE_TOL = 0.3


class LaneLabel(Enum):
    LEFT = "left"
    CURRENT = "current"
    RIGHT = "right"


#: Fixed iteration order; keeps voxel/graph construction deterministic.
LANE_ORDER = (LaneLabel.LEFT, LaneLabel.CURRENT, LaneLabel.RIGHT)


@dataclass(frozen=True)
class FrenetState:
    """Kinematic state in lane coordinates (s along the lane, d left-positive)."""

    s: float
    d: float
    v_s: float
    v_d: float
    a_s: float = 0.0
    a_d: float = 0.0

    def __post_init__(self):
        vals = (self.s, self.d, self.v_s, self.v_d, self.a_s, self.a_d)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite Frenet state: {vals}")
        if self.v_s < 0.0:
            # Forward highway motion only; tolerate float dust from sampling.
            if self.v_s > -1e-9:
                object.__setattr__(self, "v_s", 0.0)
            else:
                raise ValueError(f"negative longitudinal velocity: {self.v_s}")


@dataclass(frozen=True)
class LaneModel:
    """Straight-ish road described by the current lane's centerline polyline."""

    lane_count: int
    lane_width: float
    reference_line: np.ndarray  # (N, 2) points, strictly increasing arc length
    speed_limit: float
    current_index: int = 0  # 0-based index of the current lane, rightmost = 0

    def __post_init__(self):
        if self.lane_count < 1:
            raise ValueError("lane_count must be >= 1")
        if self.lane_width <= 0.0:
            raise ValueError("lane_width must be positive")
        if not 0 <= self.current_index < self.lane_count:
            raise ValueError("current_index outside the road")
        pts = np.asarray(self.reference_line, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError("reference_line needs >= 2 planar points")
        seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg_len <= 0.0):
            raise ValueError("reference_line arc length must strictly increase")
        object.__setattr__(self, "reference_line", pts)

    def has_lane(self, lane: LaneLabel) -> bool:
        if lane is LaneLabel.CURRENT:
            return True
        if lane is LaneLabel.LEFT:
            return self.current_index + 1 < self.lane_count
        return self.current_index > 0

    def center_offset(self, lane: LaneLabel) -> float:
        """d-coordinate of the given lane's centerline."""
        if not self.has_lane(lane):
            raise InvalidLane(f"no {lane.value} lane from index {self.current_index}")
        if lane is LaneLabel.CURRENT:
            return 0.0
        return self.lane_width if lane is LaneLabel.LEFT else -self.lane_width

    def band(self, lane: LaneLabel) -> tuple[float, float]:
        """d-interval covered by the given lane."""
        c = self.center_offset(lane)
        return c - 0.5 * self.lane_width, c + 0.5 * self.lane_width


@dataclass(frozen=True)
class Agent:
    """Another traffic participant, tracked in the current reference frame."""

    id: str
    state: FrenetState
    length: float
    width: float
    lane: LaneLabel

    def __post_init__(self):
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValueError("agent dimensions must be positive")


@dataclass(frozen=True)
class EgoVehicle:
    state: FrenetState
    length: float = 4.5
    width: float = 2.0

    def __post_init__(self):
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValueError("ego dimensions must be positive")


@dataclass(frozen=True)
class Scene:
    """Immutable snapshot of the road, the ego vehicle, and nearby agents."""

    lanes: LaneModel
    ego: EgoVehicle
    agents: tuple[Agent, ...] = ()
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate agent ids in scene")

    def within_range(self, sensing_range: float) -> "Scene":
        """Copy of the scene keeping only agents within longitudinal range."""
        kept = tuple(
            a for a in self.agents if abs(a.state.s - self.ego.state.s) <= sensing_range
        )
        return replace(self, agents=kept)


def _project_onto_polyline(point: np.ndarray, pts: np.ndarray):
    """Closest point on each polyline segment; returns best (s, proj, tangent)."""
    starts = pts[:-1]
    vecs = pts[1:] - starts
    seg_len = np.linalg.norm(vecs, axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg_len)))
    raw_t = ((point - starts) * vecs).sum(axis=1) / seg_len**2
    t = np.clip(raw_t, 0.0, 1.0)
    proj = starts + t[:, None] * vecs
    dist = np.linalg.norm(point - proj, axis=1)

    best = int(np.argmin(dist))
    ties = np.nonzero(dist <= dist[best] + 1e-6)[0]
    if ties.size > 1:
        # Neighbouring segments of a finely sampled curve tie trivially; a
        # genuine ambiguity projects onto well-separated reference locations.
        s_ties = cum[ties] + t[ties] * seg_len[ties]
        spread = float(s_ties.max() - s_ties.min())
        if spread > 1.0:
            raise AmbiguousProjection(
                f"projection ties {spread:.2f} m apart along the reference line"
            )

    overshoot = 1e-9 / max(seg_len[best], 1e-12)
    if best == 0 and raw_t[0] < -overshoot:
        raise OutOfRange("point projects before the reference line start")
    if best == len(vecs) - 1 and raw_t[best] > 1.0 + overshoot:
        raise OutOfRange("point projects beyond the reference line end")

    s = cum[best] + t[best] * seg_len[best]
    tangent = vecs[best] / seg_len[best]
    return s, proj[best], tangent


def to_frenet(
    position,
    velocity,
    acceleration,
    lanes: LaneModel,
) -> FrenetState:
    """Convert a Cartesian state into the lane-aligned frame.

    Velocity and acceleration are rotated into the tangent/normal frame of the
    projection point; no curvature correction is applied (straight-road model).
    """
    point = np.asarray(position, dtype=float)
    vel = np.asarray(velocity, dtype=float)
    acc = np.asarray(acceleration, dtype=float)
    s, proj, tangent = _project_onto_polyline(point, lanes.reference_line)
    normal = np.array([-tangent[1], tangent[0]])  # left of travel direction
    d = float(np.dot(point - proj, normal))
    return FrenetState(
        s=s,
        d=d,
        v_s=float(np.dot(vel, tangent)),
        v_d=float(np.dot(vel, normal)),
        a_s=float(np.dot(acc, tangent)),
        a_d=float(np.dot(acc, normal)),
    )


def predict_occupancy(
    agent: Agent,
    lt: float,
    ut: float,
    margin: float = DEFAULT_OCCUPANCY_MARGIN,
) -> tuple[float, float]:
    """Longitudinal interval the agent may occupy during [lt, ut].

    Constant-velocity extrapolation inflated by half the agent length plus a
    safety margin on each side.
    """
    if not lt < ut:
        raise ValueError(f"need lt < ut, got [{lt}, {ut}]")
    half = 0.5 * agent.length
    lo = agent.state.s + agent.state.v_s * lt - half - margin
    hi = agent.state.s + agent.state.v_s * ut + half + margin
    return lo, hi


def related_agents(
    scene: Scene,
    lane: LaneLabel,
    sensing_range: float = DEFAULT_SENSING_RANGE,
    straddle_tol: float = DEFAULT_STRADDLE_TOL,
) -> list[Agent]:
    """Agents whose center lies in the lane's d-band, within sensing range.

    An agent whose center sits within ``straddle_tol`` of a lane boundary is
    reported for both adjacent lanes.
    """
    if not scene.lanes.has_lane(lane):
        raise InvalidLane(f"no {lane.value} lane from index {scene.lanes.current_index}")
    lo, hi = scene.lanes.band(lane)
    ego_s = scene.ego.state.s
    out = []
    for agent in scene.agents:
        if abs(agent.state.s - ego_s) > sensing_range:
            continue
        if lo - straddle_tol <= agent.state.d <= hi + straddle_tol:
            out.append(agent)
    return out
