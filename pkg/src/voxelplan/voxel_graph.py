"""Layered voxel graph construction and minimum-cost sequence search.

Edges run from each layer back to the previous one, gated by a lane rule
(at most one lane change per episode) and a minimum spatial overlap.  Each
edge carries a cost in [0, 1] measuring how much traffic constrains the
transition; a memoized depth-first search (equivalent to layer-wise dynamic
programming) extracts the cheapest root-to-leaf voxel sequence per behavior.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .config import KinodynamicLimits
from .errors import Infeasible
from .scene import LANE_ORDER, LaneLabel
from .voxelizer import Voxel, VoxelSet

DEFAULT_D_OVERLAP_MIN = 0.1


class Behavior(Enum):
    LANE_KEEP = "lane_keep"
    LANE_CHANGE_LEFT = "lane_change_left"
    LANE_CHANGE_RIGHT = "lane_change_right"

    @property
    def target_lane(self) -> LaneLabel:
        return {
            Behavior.LANE_KEEP: LaneLabel.CURRENT,
            Behavior.LANE_CHANGE_LEFT: LaneLabel.LEFT,
            Behavior.LANE_CHANGE_RIGHT: LaneLabel.RIGHT,
        }[self]


@dataclass(frozen=True)
class GraphThresholds:
    s_overlap_min: float
    d_overlap_min: float = DEFAULT_D_OVERLAP_MIN


@dataclass
class VoxelNode:
    voxel: Voxel
    layer: int
    index: int  # position within the layer, fixed by sorted construction
    parents: list = field(default_factory=list)  # [(VoxelNode, cost), ...]


@dataclass
class VoxelGraph:
    layers: list  # list[list[VoxelNode]]

    @property
    def n_layers(self) -> int:
        return len(self.layers)


def lane_check(child: VoxelNode, parent: VoxelNode) -> bool:
    """Admissible lane transition from parent (earlier) to child (later).

    A current-lane child only follows a current-lane parent; an adjacent-lane
    child follows its own lane or the current lane.  This caps the whole
    sequence at a single lane change.
    """
    if child.voxel.lane is LaneLabel.CURRENT:
        return parent.voxel.lane is LaneLabel.CURRENT
    return parent.voxel.lane in (child.voxel.lane, LaneLabel.CURRENT)


def intersection_check(
    child: VoxelNode, parent: VoxelNode, thresholds: GraphThresholds
) -> bool:
    """Overlap gate between consecutive voxels.

    Longitudinal overlap must always reach the threshold.  The lateral
    threshold applies only between same-lane voxels: adjacent-lane bands are
    disjoint by construction and their lateral feasibility is restored later
    by the lane-change sequence modification.
    """
    if child.voxel.s_overlap(parent.voxel) < thresholds.s_overlap_min:
        return False
    if child.voxel.lane is parent.voxel.lane:
        return child.voxel.d_overlap(parent.voxel) >= thresholds.d_overlap_min
    return True


def edge_cost(
    child: VoxelNode,
    parent: VoxelNode,
    limits: KinodynamicLimits,
    dt: float,
) -> float:
    """Traffic-restriction cost of an edge, clamped into [0, 1].

    1 - 2 * s_overlap / (dt^2 * (a_max - a_min)): zero when the overlap
    saturates the kinodynamically usable window, one when the voxels barely
    touch.
    """
    s_inter = max(child.voxel.s_overlap(parent.voxel), 0.0)
    denom = dt * dt * (limits.a_s_max - limits.a_s_min)
    c = 1.0 - 2.0 * s_inter / denom
    return min(max(c, 0.0), 1.0)


def build_graph(
    voxels: VoxelSet,
    thresholds: GraphThresholds,
    limits: KinodynamicLimits,
) -> VoxelGraph:
    """Connect every voxel to its admissible predecessors with edge costs.

    First-layer nodes carry no parents; later nodes without parents are
    retained but unreachable.  Node order within a layer follows the fixed
    lane order and ascending lower s-bound, so identical voxel sets produce
    identical graphs.
    """
    layers: list[list[VoxelNode]] = []
    for i in range(voxels.partition.n):
        layer: list[VoxelNode] = []
        for lane in LANE_ORDER:
            for voxel in voxels.cell(i, lane):
                node = VoxelNode(voxel=voxel, layer=i, index=len(layer))
                if i > 0:
                    for parent in layers[i - 1]:
                        if not lane_check(node, parent):
                            continue
                        if not intersection_check(node, parent, thresholds):
                            continue
                        # The parent segment's span sets the cost scale: an
                        # unrestricted overlap then saturates the cost to zero.
                        cost = edge_cost(node, parent, limits, parent.voxel.dt)
                        node.parents.append((parent, cost))
                layer.append(node)
        layers.append(layer)
    return VoxelGraph(layers=layers)


def search(
    graph: VoxelGraph,
    behavior: Behavior,
    root_filter: Callable[[VoxelNode], bool] | None = None,
    prefer_early_transition: bool = False,
) -> list[Voxel]:
    """Minimum-cost voxel sequence ending in the behavior's target lane.

    Exhaustive over root-to-leaf paths via per-node memoization.  Ties break
    deterministically: by lane preference, then larger longitudinal overlap
    on the latest edges, then node order.  The default lane preference picks
    current-lane parents (postponing a lane change keeps the transition
    voxels wide); ``prefer_early_transition`` inverts it for replans where
    the vehicle is already committed to the crossing and can no longer hold
    the original lane band.  ``root_filter`` restricts which first-layer
    nodes may start a path.

    Raises Infeasible when no matching last-layer node connects to layer 0.
    """
    if graph.n_layers == 0 or not graph.layers[0]:
        raise Infeasible("empty voxel graph")

    # best[node id] = (cost, tiebreak tuple, parent or None); the tiebreak
    # chains (lane preference, -overlap) pairs from the node's edge downward.
    best: dict[int, tuple] = {}
    for node in graph.layers[0]:
        if root_filter is None or root_filter(node):
            best[id(node)] = (0.0, (), None)

    for layer in graph.layers[1:]:
        for node in layer:
            candidates = []
            for parent, cost in node.parents:
                prev = best.get(id(parent))
                if prev is None:
                    continue
                overlap = node.voxel.s_overlap(parent.voxel)
                if prefer_early_transition:
                    lane_pref = 0 if parent.voxel.lane is node.voxel.lane else 1
                else:
                    lane_pref = 0 if parent.voxel.lane is LaneLabel.CURRENT else 1
                candidates.append(
                    (
                        prev[0] + cost,
                        (lane_pref, -overlap) + prev[1],
                        parent.index,
                        parent,
                    )
                )
            if candidates:
                chosen = min(candidates, key=lambda c: c[:3])
                best[id(node)] = (chosen[0], chosen[1], chosen[3])

    leaves = [
        node
        for node in graph.layers[-1]
        if node.voxel.lane is behavior.target_lane and id(node) in best
    ]
    if not leaves:
        raise Infeasible(f"no connected {behavior.value} leaf in the last layer")

    leaf = min(
        leaves,
        key=lambda nd: (best[id(nd)][0], -nd.voxel.us, best[id(nd)][1], nd.index),
    )
    sequence = []
    node = leaf
    while node is not None:
        sequence.append(node.voxel)
        node = best[id(node)][2]
    sequence.reverse()
    return sequence


def path_cost(sequence: list[Voxel], limits: KinodynamicLimits) -> float:
    """Sum of edge costs along a voxel sequence (zero for single voxels)."""
    return sum(
        edge_cost(
            VoxelNode(child, 0, 0), VoxelNode(parent, 0, 0), limits, parent.dt
        )
        for parent, child in zip(sequence, sequence[1:])
    )
