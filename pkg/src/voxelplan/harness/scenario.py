"""Scenario JSON: the on-disk description of roads, egos, and traffic.

Schema::

    {
      "lanes": {"count": 4, "width": 4.0, "length": 10000.0},
      "speed_limits": {"road": 25.0, "ego": 20.0, "agents": 15.0},
      "ego": {"s": 0.0, "d": 0.0, "v_s": 15.0, "length": 4.5, "width": 2.0},
      "agents": [{"id": "a0", "s": 60.0, "d": 0.0, "v_s": 12.0,
                  "length": 4.5, "width": 2.0}],
      "traffic": {"count": 14, "speed_min": 10.0, "speed_max": 14.5},
      "seed": 1
    }

`d` is the global lateral offset (lane i centered at i * width, left
positive).  Explicit agents are placed verbatim; the optional `traffic`
block adds seeded random vehicles around the ego.  The same file feeds
both the closed-loop simulator and single-scene planning.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..config import PlannerConfig
from ..scene import Agent, EgoVehicle, FrenetState, LaneLabel, LaneModel, Scene
from .simulator import EgoRuntime, IdmParams, RoadSpec, SimAgent, SimWorld, populate_traffic


@dataclass
class Scenario:
    road: RoadSpec
    ego: dict
    agents: list
    traffic: dict | None
    seed: int
    ego_cap: float
    agent_cap: float

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        lanes = data.get("lanes", {})
        limits = data.get("speed_limits", {})
        road = RoadSpec(
            lane_count=int(lanes.get("count", 4)),
            lane_width=float(lanes.get("width", 4.0)),
            speed_limit=float(limits.get("road", 25.0)),
        )
        return cls(
            road=road,
            ego=dict(data.get("ego", {})),
            agents=[dict(a) for a in data.get("agents", [])],
            traffic=dict(data["traffic"]) if "traffic" in data else None,
            seed=int(data.get("seed", 0)),
            ego_cap=float(limits.get("ego", 20.0)),
            agent_cap=float(limits.get("agents", 15.0)),
        )

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def speed_range(self) -> tuple[float, float]:
        t = self.traffic or {}
        return (
            float(t.get("speed_min", 10.0)),
            min(float(t.get("speed_max", 14.5)), self.agent_cap),
        )

    def build_world(self) -> SimWorld:
        ego = EgoRuntime(
            s=float(self.ego.get("s", 0.0)),
            d=float(self.ego.get("d", 0.0)),
            v_s=float(self.ego.get("v_s", 0.0)),
            length=float(self.ego.get("length", 4.5)),
            width=float(self.ego.get("width", 2.0)),
            v_cap=self.ego_cap,
        )
        world = SimWorld(
            road=self.road,
            ego=ego,
            agents=[],
            rng=np.random.default_rng(self.seed),
            recycle_traffic=self.traffic is not None,
        )
        for spec in self.agents:
            cap = min(float(spec.get("v_cap", self.agent_cap)), self.agent_cap)
            world.agents.append(
                SimAgent(
                    id=str(spec["id"]),
                    lane_index=self.road.lane_of(float(spec.get("d", 0.0))),
                    s=float(spec["s"]),
                    v=float(spec.get("v_s", cap)),
                    length=float(spec.get("length", 4.5)),
                    width=float(spec.get("width", 2.0)),
                    v_cap=cap,
                )
            )
        if self.traffic is not None:
            populate_traffic(
                world,
                count=int(self.traffic.get("count", 12)),
                speed_range=self.speed_range(),
            )
        return world

    def build_scene(self, config: PlannerConfig) -> Scene:
        """Single planning snapshot in the ego's current-lane frame."""
        road = self.road
        ego_d = float(self.ego.get("d", 0.0))
        ego_s = float(self.ego.get("s", 0.0))
        lane_index = road.lane_of(ego_d)
        center = road.lane_center(lane_index)
        lanes = LaneModel(
            lane_count=road.lane_count,
            lane_width=road.lane_width,
            reference_line=np.array([[ego_s - 1000.0, center], [ego_s + 1000.0, center]]),
            speed_limit=road.speed_limit,
            current_index=lane_index,
        )
        window = 1.5 * road.lane_width + config.straddle_tolerance
        agents = []
        for spec in self.agents:
            rel_d = float(spec.get("d", 0.0)) - center
            if abs(float(spec["s"]) - ego_s) > config.sensing_range or abs(rel_d) > window:
                continue
            if rel_d > 0.5 * road.lane_width:
                label = LaneLabel.LEFT
            elif rel_d < -0.5 * road.lane_width:
                label = LaneLabel.RIGHT
            else:
                label = LaneLabel.CURRENT
            agents.append(
                Agent(
                    id=str(spec["id"]),
                    state=FrenetState(float(spec["s"]), rel_d, float(spec.get("v_s", 0.0)), float(spec.get("v_d", 0.0))),
                    length=float(spec.get("length", 4.5)),
                    width=float(spec.get("width", 2.0)),
                    lane=label,
                )
            )
        state = FrenetState(
            ego_s,
            ego_d - center,
            float(self.ego.get("v_s", 0.0)),
            float(self.ego.get("v_d", 0.0)),
            float(self.ego.get("a_s", 0.0)),
            float(self.ego.get("a_d", 0.0)),
        )
        return Scene(
            lanes=lanes,
            ego=EgoVehicle(state=state, length=float(self.ego.get("length", 4.5)), width=float(self.ego.get("width", 2.0))),
            agents=tuple(agents),
        )


def endurance_scenario(seed: int = 1, agent_count: int = 14) -> Scenario:
    """The 8-minute endurance setup: 4 lanes, agents capped at 15 m/s,
    ego capped at 20 m/s, seeded random traffic with recycling."""
    return Scenario.from_dict(
        {
            "lanes": {"count": 4, "width": 4.0, "length": 1e6},
            "speed_limits": {"road": 25.0, "ego": 20.0, "agents": 15.0},
            "ego": {"s": 0.0, "d": 4.0, "v_s": 15.0},
            "agents": [],
            "traffic": {"count": agent_count, "speed_min": 10.0, "speed_max": 14.5},
            "seed": seed,
        }
    )
