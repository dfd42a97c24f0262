"""Scaled piecewise quintic Bezier curves and their derivative algebra.

Each segment maps its time span [lt, ut] onto the unit interval and scales
the Bernstein sum by the span length dt, so the physical position at time t
is  dt * B(u)  with  u = (t - lt) / dt.  Differentiation in time therefore
costs one factor 1/dt per order beyond the first:

    order 0:  dt * B(u)          order 2:  B''(u) / dt
    order 1:  B'(u)              order 3:  B'''(u) / dt^2

Derivatives of a Bernstein polynomial are again Bernstein polynomials whose
control points are scaled finite differences of the original points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OutOfSpan

DEGREE = 5
_BINOM = {
    deg: np.array([math.comb(deg, k) for k in range(deg + 1)], dtype=float)
    for deg in range(DEGREE + 1)
}

#: Finite-difference maps from quintic control points to the control points
#: of the derivative Bernstein polynomials (before the 1/dt time scaling).
DIFF_1 = 5.0 * (np.eye(6, k=1) - np.eye(6))[:5]
DIFF_2 = 20.0 * (np.eye(6, k=2) - 2.0 * np.eye(6, k=1) + np.eye(6))[:4]
DIFF_3 = 60.0 * (np.eye(6, k=3) - 3.0 * np.eye(6, k=2) + 3.0 * np.eye(6, k=1) - np.eye(6))[:3]

SAMPLE_DT = 0.02


def bernstein_value(points: np.ndarray, u) -> np.ndarray:
    """Evaluate a Bernstein polynomial with the given control points at u."""
    points = np.asarray(points, dtype=float)
    deg = points.size - 1
    u = np.asarray(u, dtype=float)
    k = np.arange(deg + 1)
    basis = _BINOM[deg] * (1.0 - u[..., None]) ** (deg - k) * u[..., None] ** k
    return basis @ points


def derivative_control_points(points, dt: float, order: int) -> np.ndarray:
    """Control points of the order-th time derivative of a scaled segment."""
    points = np.asarray(points, dtype=float)
    if order == 1:
        return DIFF_1 @ points
    if order == 2:
        return (DIFF_2 @ points) / dt
    if order == 3:
        return (DIFF_3 @ points) / (dt * dt)
    raise ValueError(f"derivative order must be 1..3, got {order}")


@dataclass(frozen=True)
class BezierSegment:
    """One quintic segment over [lt, ut] with per-axis control points."""

    control_points_s: np.ndarray
    control_points_d: np.ndarray
    lt: float
    ut: float

    def __post_init__(self):
        ps = np.asarray(self.control_points_s, dtype=float)
        pd = np.asarray(self.control_points_d, dtype=float)
        if ps.shape != (6,) or pd.shape != (6,):
            raise ValueError("quintic segments need 6 control points per axis")
        if not (np.isfinite(ps).all() and np.isfinite(pd).all()):
            raise ValueError("non-finite control points")
        if not self.ut > self.lt:
            raise ValueError(f"empty time span [{self.lt}, {self.ut}]")
        object.__setattr__(self, "control_points_s", ps)
        object.__setattr__(self, "control_points_d", pd)

    @property
    def dt(self) -> float:
        return self.ut - self.lt

    def points(self, axis: str) -> np.ndarray:
        if axis == "s":
            return self.control_points_s
        if axis == "d":
            return self.control_points_d
        raise ValueError(f"axis must be 's' or 'd', got {axis!r}")


def evaluate(segment: BezierSegment, t, axis: str, order: int = 0):
    """Value of the segment (or one of its time derivatives) at time t."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < segment.lt - 1e-9) or np.any(t_arr > segment.ut + 1e-9):
        raise OutOfSpan(f"t={t} outside [{segment.lt}, {segment.ut}]")
    dt = segment.dt
    u = np.clip((t_arr - segment.lt) / dt, 0.0, 1.0)
    # Exact endpoint interpolation: cancellation in (t - lt)/dt must not
    # perturb the one-hot Bernstein basis at the span ends.
    u = np.where(t_arr == segment.ut, 1.0, np.where(t_arr == segment.lt, 0.0, u))
    points = segment.points(axis)
    if order == 0:
        val = dt * bernstein_value(points, u)
    elif order in (1, 2, 3):
        val = bernstein_value(derivative_control_points(points, dt, order), u)
    else:
        raise ValueError(f"order must be 0..3, got {order}")
    return float(val) if np.isscalar(t) or np.ndim(t) == 0 else val


@dataclass(frozen=True)
class PiecewiseBezier:
    """Chained segments covering the whole planning horizon."""

    segments: tuple[BezierSegment, ...]

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValueError("need at least one segment")
        for a, b in zip(segs, segs[1:]):
            if a.ut != b.lt:
                raise ValueError(f"time spans must chain exactly ({a.ut} != {b.lt})")
        object.__setattr__(self, "segments", segs)

    @property
    def t_start(self) -> float:
        return self.segments[0].lt

    @property
    def t_end(self) -> float:
        return self.segments[-1].ut

    def segment_index(self, t: float) -> int:
        if t < self.t_start - 1e-9 or t > self.t_end + 1e-9:
            raise OutOfSpan(f"t={t} outside [{self.t_start}, {self.t_end}]")
        for i, seg in enumerate(self.segments):
            if t <= seg.ut:
                return i
        return len(self.segments) - 1

    def value(self, t: float, axis: str, order: int = 0) -> float:
        seg = self.segments[self.segment_index(t)]
        return evaluate(seg, min(max(t, seg.lt), seg.ut), axis, order)

    def sample_times(self, sample_dt: float = SAMPLE_DT) -> np.ndarray:
        if sample_dt <= 0.0:
            raise ValueError("sample_dt must be positive")
        n = max(1, int(round((self.t_end - self.t_start) / sample_dt)))
        return self.t_start + np.linspace(0.0, self.t_end - self.t_start, n + 1)

    def profile(self, sample_dt: float = SAMPLE_DT) -> dict[str, np.ndarray]:
        """Sampled kinematic profile: position through jerk plus curvature."""
        ts = self.sample_times(sample_dt)
        inner = np.array([seg.lt for seg in self.segments[1:]])
        seg_idx = np.searchsorted(inner, ts, side="right")
        cols = {"t": ts}
        names = ("s", "d", "v_s", "v_d", "a_s", "a_d", "j_s", "j_d")
        data = {name: np.empty_like(ts) for name in names}
        for i, seg in enumerate(self.segments):
            mask = seg_idx == i
            if not mask.any():
                continue
            t_seg = ts[mask]
            for axis in ("s", "d"):
                for prefix, order in (("", 0), ("v_", 1), ("a_", 2), ("j_", 3)):
                    data[f"{prefix}{axis}"][mask] = evaluate(seg, t_seg, axis, order)
        cols.update(data)
        v_s, v_d = cols["v_s"], cols["v_d"]
        a_s, a_d = cols["a_s"], cols["a_d"]
        speed_sq = v_s**2 + v_d**2
        with np.errstate(divide="ignore", invalid="ignore"):
            kappa = np.abs(v_s * a_d - v_d * a_s) / speed_sq**1.5
        kappa[speed_sq < 1e-6] = np.nan
        cols["kappa"] = kappa
        return cols


@dataclass(frozen=True)
class CurvatureProfile:
    samples: tuple  # (t, kappa) pairs
    degenerate: tuple  # sample times skipped for near-zero speed


def curvature_profile(trajectory: PiecewiseBezier, sample_dt: float) -> CurvatureProfile:
    """Curvature samples treating (s, d) as a Cartesian plane.

    kappa = |v_s * a_d - v_d * a_s| / (v_s^2 + v_d^2)^(3/2); samples where the
    squared speed falls below 1e-6 are reported separately and skipped.
    """
    cols = trajectory.profile(sample_dt)
    samples, degenerate = [], []
    for t, k in zip(cols["t"], cols["kappa"]):
        if np.isnan(k):
            degenerate.append(float(t))
        else:
            samples.append((float(t), float(k)))
    return CurvatureProfile(samples=tuple(samples), degenerate=tuple(degenerate))
