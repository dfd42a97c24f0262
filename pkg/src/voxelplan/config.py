"""Shared configuration types for the planning stack.

Defined here (rather than in the modules that conceptually own them) so the
corridor generator, graph builder, and optimizer can all depend on them
without import cycles; the owning modules re-export them.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .qp_solver import QpOptions


@dataclass(frozen=True)
class KinodynamicLimits:
    """Velocity, acceleration, jerk, and curvature envelopes (SI units)."""

    v_s_min: float = 0.0
    v_s_max: float = 20.0
    v_d_min: float = -2.0
    v_d_max: float = 2.0
    a_s_min: float = -2.0
    a_s_max: float = 2.0
    a_d_min: float = -2.0
    a_d_max: float = 2.0
    j_s_min: float = -2.0
    j_s_max: float = 2.0
    j_d_min: float = -2.0
    j_d_max: float = 2.0
    curvature_max: float = 0.2

    def __post_init__(self):
        pairs = (
            (self.v_s_min, self.v_s_max),
            (self.v_d_min, self.v_d_max),
            (self.a_s_min, self.a_s_max),
            (self.a_d_min, self.a_d_max),
            (self.j_s_min, self.j_s_max),
            (self.j_d_min, self.j_d_max),
        )
        if any(lo >= hi for lo, hi in pairs):
            raise ValueError("each lower limit must be below its upper limit")
        if self.v_s_min < 0.0:
            raise ValueError("longitudinal velocity lower bound must be >= 0")
        if self.curvature_max <= 0.0:
            raise ValueError("curvature_max must be positive")


@dataclass(frozen=True)
class ObjectiveWeights:
    """Weights of the five objective terms plus end-position blending knobs."""

    w_jerk: float = 1.0
    w_end_position: float = 2.0
    w_end_velocity: float = 1.0
    w_lateral_velocity: float = 5.0
    w_longitudinal_accel: float = 0.5
    w_front: float = 1.0
    w_rear: float = 1.0
    response_time: float = 1.0

    def __post_init__(self):
        weights = (
            self.w_jerk,
            self.w_end_position,
            self.w_end_velocity,
            self.w_lateral_velocity,
            self.w_longitudinal_accel,
            self.w_front,
            self.w_rear,
        )
        if any(w < 0.0 for w in weights):
            raise ValueError("objective weights must be non-negative")
        if self.w_front + self.w_rear <= 0.0:
            raise ValueError("w_front + w_rear must be positive")


@dataclass(frozen=True)
class PlannerConfig:
    """Everything one planning episode needs besides the scene itself."""

    horizon: float = 6.0
    segment_count: int = 5
    segment_growth: float = 1.2
    limits: KinodynamicLimits = KinodynamicLimits()
    weights: ObjectiveWeights = ObjectiveWeights()
    qp: QpOptions = QpOptions()
    s_overlap_min: float = 0.25
    d_overlap_min: float = 0.1
    sensing_range: float = 100.0
    occupancy_margin: float = 1.0
    min_range_extra: float = 2.0
    max_voxels_per_cell: int = 4
    straddle_tolerance: float = 0.3
    replan_period: float = 0.2
    min_segments: int = 2
    fixed_sequence_length: bool = False

    def __post_init__(self):
        if self.horizon <= 0.0 or self.segment_count < 1 or self.segment_growth < 1.0:
            raise ValueError("invalid time partition parameters")
        if self.replan_period <= 0.0:
            raise ValueError("replan_period must be positive")
        if not 1 <= self.min_segments <= self.segment_count:
            raise ValueError("min_segments outside [1, segment_count]")

    def with_overrides(self, **kwargs) -> "PlannerConfig":
        return replace(self, **kwargs)
