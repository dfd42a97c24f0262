"""Exception types shared across the planning stack."""
from __future__ import annotations


class VoxelPlanError(Exception):
    """Base class for all planner errors."""


class InvalidConfig(VoxelPlanError):
    """A configuration value is outside its valid range."""


class AmbiguousProjection(VoxelPlanError):
    """A point projects equally well onto two distinct reference-line segments."""


class OutOfRange(VoxelPlanError):
    """A point projects beyond the ends of the reference line."""


class InvalidLane(VoxelPlanError):
    """The requested lane does not exist in the lane model."""


class EmptyBand(VoxelPlanError):
    """Lateral shrinking or clipping left no usable d-band."""


class OutOfSpan(VoxelPlanError):
    """Evaluation time lies outside a curve segment's time span."""


class DimensionMismatch(VoxelPlanError):
    """Matrix or vector dimensions of a QP are inconsistent."""


class NumericalBreakdown(VoxelPlanError):
    """Factorization failed even after regularization."""


class Infeasible(VoxelPlanError):
    """No voxel path connects the first layer to a matching last-layer node."""


class NoTransition(VoxelPlanError):
    """Sequence modification was requested for a lane-keeping sequence."""


class EmptySequence(VoxelPlanError):
    """An operation received an empty voxel sequence."""


class OptimizationFailed(VoxelPlanError):
    """All retry attempts failed; carries one reason string per attempt."""

    def __init__(self, reasons: list[str]):
        super().__init__(f"optimization failed after {len(reasons)} attempts")
        self.reasons = reasons


class AllBehaviorsFailed(VoxelPlanError):
    """No behavior produced a valid trajectory; carries per-behavior reasons."""

    def __init__(self, reasons: dict):
        super().__init__("no behavior produced a valid trajectory")
        self.reasons = reasons


class CollisionDetected(VoxelPlanError):
    """Simulation detected an overlap between the ego and an agent."""

    def __init__(self, agent_id, time: float):
        super().__init__(f"collision with agent {agent_id!r} at t={time:.3f}s")
        self.agent_id = agent_id
        self.time = time


class MissingEgo(VoxelPlanError):
    """The requested ego id is absent from the replay log."""


class TruncatedLog(VoxelPlanError):
    """The replay log ends before the requested horizon."""
