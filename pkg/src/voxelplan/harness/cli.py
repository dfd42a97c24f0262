"""Command-line entry points: plan, sim, replay, ablate, dump."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from ..config import KinodynamicLimits, ObjectiveWeights, PlannerConfig
from ..errors import AllBehaviorsFailed
from ..planner import plan_episode
from ..voxelizer import generate_voxels, make_partition
from ..voxel_graph import GraphThresholds, build_graph
from .ablation import VARIANTS, ablation_table, run_ablation
from .metrics import Metrics
from .replay import ReplayLog, generate_replay, run_open_loop, run_open_loop_batch
from .scenario import Scenario, endurance_scenario
from .simulator import run_closed_loop
from .svg import corridor_diagram, profile_diagram


def load_config(path: str | None, margin_for_ego: float | None = None) -> PlannerConfig:
    """PlannerConfig from a JSON override file (flat field names)."""
    overrides = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        limits = KinodynamicLimits(**data.pop("limits", {}))
        weights = ObjectiveWeights(**data.pop("weights", {}))
        overrides = dict(data, limits=limits, weights=weights)
    config = PlannerConfig(**overrides)
    if margin_for_ego is not None and "occupancy_margin" not in overrides:
        config = config.with_overrides(occupancy_margin=1.0 + 0.5 * margin_for_ego)
    return config


def _write(path: Path, text: str, verbose: bool) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    if verbose:
        print(f"wrote {path}")


def _write_metrics(out_dir: Path, metrics: Metrics, verbose: bool) -> None:
    _write(out_dir / "metrics.json", metrics.to_json(), verbose)
    timing = json.dumps(metrics.latency_summary(), sort_keys=True, indent=2) + "\n"
    _write(out_dir / "timing.json", timing, verbose)


def _trajectory_csv(trajectory) -> str:
    cols = trajectory.profile(0.02)
    names = ["t", "s", "d", "v_s", "v_d", "a_s", "a_d", "j_s", "j_d", "kappa"]
    lines = [",".join(names)]
    for i in range(len(cols["t"])):
        lines.append(",".join(f"{cols[n][i]:.6f}" for n in names))
    return "\n".join(lines) + "\n"


def _qp_dump(problem) -> str:
    return json.dumps(
        {
            "dimension": problem.dimension,
            "H": problem.H.tolist(),
            "g": problem.g.tolist(),
            "A_eq": problem.A_eq.tolist(),
            "b_eq": problem.b_eq.tolist(),
            "A_in": problem.A_in.tolist(),
            "lb": np.where(np.isfinite(problem.lb), problem.lb, None).tolist(),
            "ub": np.where(np.isfinite(problem.ub), problem.ub, None).tolist(),
        },
        sort_keys=True,
    ) + "\n"


def cmd_plan(args) -> int:
    scenario = Scenario.load(args.scene)
    config = load_config(args.config, margin_for_ego=float(scenario.ego.get("length", 4.5)))
    scene = scenario.build_scene(config)
    out = Path(args.out_dir)
    try:
        result = plan_episode(scene, config)
    except AllBehaviorsFailed as exc:
        _write(out / "plan.json", json.dumps({"status": "failed", "reasons": exc.reasons}, sort_keys=True, indent=2) + "\n", args.verbose)
        print("planning failed:", exc.reasons)
        return 1
    summary = {
        "status": "ok",
        "selected_behavior": result.selected_behavior.value,
        "selected_cost": result.selected_cost,
        "behaviors": {
            b.value: (
                {"cost": o.cost, "mean_speed": o.mean_speed, "segments": len(o.sequence)}
                if o.succeeded
                else {"failure": o.failure_reason}
            )
            for b, o in result.outcomes.items()
        },
    }
    _write(out / "plan.json", json.dumps(summary, sort_keys=True, indent=2) + "\n", args.verbose)
    _write(out / "trajectory.csv", _trajectory_csv(result.selected_trajectory), args.verbose)
    if args.svg:
        seq = result.selected_sequence
        _write(out / "corridor_st.svg", corridor_diagram(seq, result.selected_trajectory, "s"), args.verbose)
        _write(out / "corridor_dt.svg", corridor_diagram(seq, result.selected_trajectory, "d"), args.verbose)
        _write(out / "profiles.svg", profile_diagram(result.selected_trajectory, config.limits), args.verbose)
    print(f"selected {result.selected_behavior.value} (cost {result.selected_cost:.3f})")
    return 0


def cmd_sim(args) -> int:
    scenario = endurance_scenario(seed=args.seed, agent_count=args.agents) if args.scenario is None else Scenario.load(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    config = load_config(args.config, margin_for_ego=float(scenario.ego.get("length", 4.5)))
    world = scenario.build_world()
    result = run_closed_loop(world, config, duration=args.duration, speed_range=scenario.speed_range())
    out = Path(args.out_dir)
    _write_metrics(out, result.metrics, args.verbose)
    trace_lines = ["t,s,d,v_s,v_d,a_s,a_d,j_s,j_d,lane,response_time"]
    tr = result.trace
    for i in range(len(tr["t"])):
        rt = tr["response_time"][i]
        trace_lines.append(
            ",".join(
                [f"{tr[k][i]:.4f}" for k in ("t", "s", "d", "v_s", "v_d", "a_s", "a_d", "j_s", "j_d")]
                + [str(tr["lane"][i]), "inf" if rt == float("inf") else f"{rt:.3f}"]
            )
        )
    _write(out / "trace.csv", "\n".join(trace_lines) + "\n", args.verbose)
    m = result.metrics
    print(
        f"sim: {args.duration:.0f}s, collisions={m.collisions}, lane_changes={m.lane_changes}, "
        f"avg_v={m.efficiency:.2f} m/s, risk={m.risk:.3f}"
        + (f", aborted: {result.aborted_reason}" if result.aborted_reason else "")
    )
    return 0 if result.aborted_reason is None else 1


def cmd_replay(args) -> int:
    config = load_config(args.config, margin_for_ego=4.5)
    out = Path(args.out_dir)
    if args.log:
        log = ReplayLog.from_csv(Path(args.log).read_text(encoding="utf-8"))
        result = run_open_loop(log, args.ego_id, args.target_lane, horizon=args.horizon, config=config)
        _write_metrics(out, result.metrics, args.verbose)
        print(f"outcome: {result.outcome} (final lane {result.final_lane})")
        return 0
    metrics = Metrics()
    outcomes = []
    modes = (False, True) if args.mixed else (args.lane_change,)
    for change in modes:
        batch, outs = run_open_loop_batch(
            args.batch,
            seed=args.seed + (50_000 if change else 0),
            config=config,
            density=args.density,
            lane_change=change,
            horizon=args.horizon,
        )
        metrics = metrics.merge(batch)
        outcomes.extend(outs)
    _write_metrics(out, metrics, args.verbose)
    counts = {o: outcomes.count(o) for o in ("success", "failure", "wrong_lane")}
    print(
        f"batch of {metrics.runs}: succ={metrics.success_rate:.2f} fail={metrics.failure_rate:.2f} "
        f"risk={metrics.risk:.3f} effi={metrics.efficiency:.2f} ({counts})"
    )
    return 0


def cmd_ablate(args) -> int:
    base = load_config(args.config, margin_for_ego=4.5)
    table = run_ablation(base, runs=args.runs, seed=args.seed, density=args.density)
    out = Path(args.out_dir)
    _write(out / "ablation.csv", ablation_table(table), args.verbose)
    payload = {name: m.to_dict() for name, m in table.items()}
    _write(out / "metrics.json", json.dumps(payload, sort_keys=True, indent=2) + "\n", args.verbose)
    print(ablation_table(table))
    return 0


def cmd_dump(args) -> int:
    scenario = Scenario.load(args.scene)
    config = load_config(args.config, margin_for_ego=float(scenario.ego.get("length", 4.5)))
    scene = scenario.build_scene(config)
    out = Path(args.out_dir)
    partition = make_partition(config.horizon, config.segment_count, config.segment_growth)
    voxels = generate_voxels(
        scene,
        partition,
        config.limits,
        occupancy_margin=config.occupancy_margin,
        sensing_range=config.sensing_range,
        straddle_tol=config.straddle_tolerance,
        min_range_extra=config.min_range_extra,
        max_voxels_per_cell=config.max_voxels_per_cell,
    )
    corridor = {
        f"{i}:{lane.value}": [
            {"ls": v.ls, "us": v.us, "ld": v.ld, "ud": v.ud, "lt": v.lt, "ut": v.ut}
            for v in cell
        ]
        for (i, lane), cell in sorted(
            voxels.by_segment_and_lane.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
        )
    }
    _write(out / "corridor.json", json.dumps(corridor, sort_keys=True, indent=2) + "\n", args.verbose)

    thresholds = GraphThresholds(config.s_overlap_min, config.d_overlap_min)
    graph = build_graph(voxels, thresholds, config.limits)
    graph_dump = {
        "layers": [
            [
                {
                    "lane": node.voxel.lane.value,
                    "ls": node.voxel.ls,
                    "us": node.voxel.us,
                    "parents": [
                        {"index": parent.index, "cost": cost} for parent, cost in node.parents
                    ],
                }
                for node in layer
            ]
            for layer in graph.layers
        ]
    }
    _write(out / "graph.json", json.dumps(graph_dump, sort_keys=True, indent=2) + "\n", args.verbose)

    if args.qp:
        from ..optimizer import assemble, ideal_end_states
        from ..voxel_graph import Behavior, search
        from ..errors import Infeasible

        try:
            sequence = search(
                graph,
                Behavior.LANE_KEEP,
                root_filter=lambda n: n.voxel.contains(scene.ego.state.s, scene.ego.state.d),
            )
            ideals = ideal_end_states(
                sequence, scene, config.weights, config.limits,
                occupancy_margin=config.occupancy_margin, sensing_range=config.sensing_range,
            )
            problem = assemble(sequence, scene.ego.state, ideals, config.weights, config.limits, partition)
            _write(out / "qp.json", _qp_dump(problem), args.verbose)
        except Infeasible as exc:
            _write(out / "qp.json", json.dumps({"error": str(exc)}) + "\n", args.verbose)
    print(f"dumped corridor and graph to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxelplan", description="Voxel-corridor trajectory planner harness")
    parser.add_argument("--config", help="planner config JSON overrides", default=None)
    parser.add_argument("--out-dir", default="out", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan one episode from a scene snapshot")
    p.add_argument("--scene", required=True)
    p.add_argument("--svg", action="store_true", help="emit corridor and profile SVGs")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("sim", help="closed-loop simulation")
    p.add_argument("--scenario", default=None, help="scenario JSON (default: endurance setup)")
    p.add_argument("--duration", type=float, default=480.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--agents", type=int, default=14)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("replay", help="open-loop replay runs")
    p.add_argument("--log", default=None, help="replay CSV (otherwise synthetic batch)")
    p.add_argument("--ego-id", default="ego")
    p.add_argument("--target-lane", type=int, default=0)
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--lane-change", action="store_true")
    p.add_argument("--mixed", action="store_true", help="half lane-keep, half lane-change")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("ablate", help="variant comparison sweep")
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--density", type=float, default=1.6)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump", help="corridor/graph/QP debug dumps")
    p.add_argument("--scene", required=True)
    p.add_argument("--qp", action="store_true", help="include the lane-keep QP matrices")
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
