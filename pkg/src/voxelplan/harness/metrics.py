"""Safety and efficiency metrics shared by both test harnesses."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..config import KinodynamicLimits
from ..scene import Agent, FrenetState

RISK_RESPONSE_THRESHOLD = 1.0  # seconds of response margin below which a frame is dangerous


def response_time(
    ego: FrenetState,
    front: Agent | None,
    limits: KinodynamicLimits,
    ego_length: float = 4.5,
) -> float:
    """Largest delay after which the ego can still out-brake a braking leader.

    Both vehicles brake at maximum deceleration; the ego coasts at its
    current speed for the returned time first.  Closed form from the two
    stopping profiles: the minimum gap over time is attained either now or
    with both vehicles stopped, so the bound follows from the final rest
    positions.  Infinite when there is no leader.
    """
    if front is None:
        return float("inf")
    decel = abs(limits.a_s_min)
    gap = front.state.s - ego.s - 0.5 * (front.length + ego_length)
    if gap <= 0.0:
        return 0.0
    if ego.v_s <= 0.0:
        return float("inf")
    stop_ego = ego.v_s**2 / (2.0 * decel)
    stop_front = front.state.v_s**2 / (2.0 * decel)
    tau = (gap + stop_front - stop_ego) / ego.v_s
    return max(tau, 0.0)


def simulate_response_time(
    ego: FrenetState,
    front: Agent,
    limits: KinodynamicLimits,
    ego_length: float = 4.5,
    dt: float = 1e-3,
    t_max: float = 60.0,
) -> float:
    """Brute-force oracle for response_time: 1 ms forward integration."""
    decel = abs(limits.a_s_min)
    gap0 = front.state.s - ego.s - 0.5 * (front.length + ego_length)
    if gap0 <= 0.0:
        return 0.0

    def survives(tau: float) -> bool:
        se, ve = 0.0, ego.v_s
        sf, vf = gap0, front.state.v_s
        t = 0.0
        while t < t_max and (ve > 0.0 or vf > 0.0):
            vf = max(vf - decel * dt, 0.0)
            sf += vf * dt
            ve_next = ve if t < tau else max(ve - decel * dt, 0.0)
            se += ve_next * dt
            ve = ve_next
            if sf - se <= 0.0:
                return False
            t += dt
        return sf - se > 0.0

    lo, hi = 0.0, t_max
    if survives(hi):
        return float("inf")
    if not survives(0.0):
        return 0.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if survives(mid):
            lo = mid
        else:
            hi = mid
    return lo


def compute_risk(response_times, threshold: float = RISK_RESPONSE_THRESHOLD) -> float:
    """Fraction of trace frames whose response margin is below the threshold."""
    times = np.asarray(list(response_times), dtype=float)
    if times.size == 0:
        raise ValueError("risk needs at least one trace frame")
    return float(np.count_nonzero(times < threshold) / times.size)


@dataclass
class Metrics:
    """Aggregate outcome of a harness run or batch."""

    runs: int = 0
    successes: int = 0
    failures: int = 0
    wrong_lane: int = 0
    collisions: int = 0
    planning_failures: int = 0
    lane_changes: int = 0
    danger_frames: int = 0
    total_frames: int = 0
    distance: float = 0.0
    driving_time: float = 0.0
    episode_latencies_ms: list = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return self.successes / self.runs if self.runs else 0.0

    @property
    def failure_rate(self) -> float:
        return self.failures / self.runs if self.runs else 0.0

    @property
    def risk(self) -> float:
        return self.danger_frames / self.total_frames if self.total_frames else 0.0

    @property
    def efficiency(self) -> float:
        """Average longitudinal velocity over all driven frames (m/s)."""
        return self.distance / self.driving_time if self.driving_time > 0 else 0.0

    def merge(self, other: "Metrics") -> "Metrics":
        out = Metrics(
            runs=self.runs + other.runs,
            successes=self.successes + other.successes,
            failures=self.failures + other.failures,
            wrong_lane=self.wrong_lane + other.wrong_lane,
            collisions=self.collisions + other.collisions,
            planning_failures=self.planning_failures + other.planning_failures,
            lane_changes=self.lane_changes + other.lane_changes,
            danger_frames=self.danger_frames + other.danger_frames,
            total_frames=self.total_frames + other.total_frames,
            distance=self.distance + other.distance,
            driving_time=self.driving_time + other.driving_time,
        )
        out.episode_latencies_ms = self.episode_latencies_ms + other.episode_latencies_ms
        return out

    def to_dict(self, include_timing: bool = False) -> dict:
        """JSON-ready view; timing is excluded by default so that identical
        runs produce byte-identical metrics files."""
        out = {
            "runs": self.runs,
            "successes": self.successes,
            "failures": self.failures,
            "wrong_lane": self.wrong_lane,
            "success_rate": self.success_rate,
            "failure_rate": self.failure_rate,
            "risk": self.risk,
            "efficiency": self.efficiency,
            "collisions": self.collisions,
            "planning_failures": self.planning_failures,
            "lane_changes": self.lane_changes,
            "danger_frames": self.danger_frames,
            "total_frames": self.total_frames,
            "distance": self.distance,
            "driving_time": self.driving_time,
        }
        if include_timing:
            out["episode_latency_ms"] = self.latency_summary()
        return out

    def latency_summary(self) -> dict:
        lat = np.asarray(self.episode_latencies_ms, dtype=float)
        if lat.size == 0:
            return {"count": 0}
        return {
            "count": int(lat.size),
            "mean": float(lat.mean()),
            "p50": float(np.percentile(lat, 50)),
            "p95": float(np.percentile(lat, 95)),
            "max": float(lat.max()),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def table_row(self, label: str) -> str:
        """CSV row mirroring the Succ./Fail/Risk/Effi. comparison columns."""
        return (
            f"{label},{self.success_rate:.3f},{self.failure_rate:.3f},"
            f"{self.risk:.3f},{self.efficiency:.2f}"
        )

    TABLE_HEADER = "variant,succ,fail,risk,effi"
