"""Config switches reproducing the planner's ablation variants."""
from __future__ import annotations

from dataclasses import replace

from ..config import ObjectiveWeights, PlannerConfig
from .metrics import Metrics
from .replay import run_open_loop_batch


def variant_config(name: str, base: PlannerConfig) -> PlannerConfig:
    """Named planner variants for the comparison study."""
    if name == "default":
        return base
    if name == "fixed_count":
        # no tail shedding; every sequence keeps the full segment count
        return replace(base, fixed_sequence_length=True)
    if name == "uniform_dt":
        return replace(base, segment_growth=1.0)
    if name == "jerk_only":
        return replace(
            base,
            weights=replace(
                base.weights,
                w_end_position=0.0,
                w_end_velocity=0.0,
                w_lateral_velocity=0.0,
                w_longitudinal_accel=0.0,
            ),
        )
    if name == "jerk_and_end_states":
        return replace(
            base,
            weights=replace(base.weights, w_lateral_velocity=0.0, w_longitudinal_accel=0.0),
        )
    raise ValueError(f"unknown variant {name!r}")


VARIANTS = ("default", "fixed_count", "uniform_dt", "jerk_only", "jerk_and_end_states")


def run_ablation(
    base: PlannerConfig,
    runs: int = 50,
    seed: int = 7,
    density: float = 1.6,
    lane_change_fraction: float = 0.5,
    variants=VARIANTS,
) -> dict:
    """Open-loop batches per variant on identical seeded traffic."""
    n_change = int(round(runs * lane_change_fraction))
    n_keep = runs - n_change
    table = {}
    for name in variants:
        config = variant_config(name, base)
        keep, _ = run_open_loop_batch(n_keep, seed=seed, config=config, density=density, lane_change=False)
        change, _ = run_open_loop_batch(
            n_change, seed=seed + 10_000, config=config, density=density, lane_change=True
        )
        table[name] = keep.merge(change)
    return table


def ablation_table(table: dict) -> str:
    lines = [Metrics.TABLE_HEADER]
    for name, metrics in table.items():
        lines.append(metrics.table_row(name))
    return "\n".join(lines) + "\n"
