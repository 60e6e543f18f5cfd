"""Iterative ripup-and-reroute detailed router.

One iteration routes (or reroutes) nets with weighted A*, runs the design rule
check, then decays and re-seeds the per-node marker costs. ``run_flow`` repeats
until no violations remain or the iteration cap is hit.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .grid import HORIZONTAL, Design, Net, Node, StaticFeatures, static_features

logger = logging.getLogger(__name__)

SHORT = "short"
SPACING = "spacing"
FIXED_SHAPE = "fixed_shape"
DECAY_MIN = 0.5
DECAY_MAX = 0.99


class UnroutableError(RuntimeError):
    """A net has a pin that cannot be reached from the rest of the net."""


@dataclass(frozen=True)
class WeightVector:
    drc_cost: float
    marker_cost: float
    fixed_shape_cost: float
    marker_decay: float

    def __post_init__(self):
        for name in ("drc_cost", "marker_cost", "fixed_shape_cost", "marker_decay"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("drc_cost", "marker_cost", "fixed_shape_cost"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 1.0):
                raise ValueError(f"{name} must be a finite value >= 1, got {v}")
        if not (DECAY_MIN - 1e-12 <= self.marker_decay <= DECAY_MAX + 1e-12):
            raise ValueError(f"marker_decay must be in [{DECAY_MIN}, {DECAY_MAX}], got {self.marker_decay}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.drc_cost, self.marker_cost, self.fixed_shape_cost, self.marker_decay)


@dataclass(frozen=True)
class RouterConfig:
    """Fixed cost-model constants. Only :class:`WeightVector` is tuned per iteration."""

    base_cost: float = 1.0
    wrong_way_factor: float = 4.0
    via_cost: float = 2.0
    tile_size: int = 8
    max_iterations: int = 64
    ripup_mode: str = "sequential"
    spacing_aware: bool = True


DEFAULT_ROUTER_CONFIG = RouterConfig()


@dataclass
class CostMap:
    marker: np.ndarray
    occupancy: np.ndarray

    @classmethod
    def empty(cls, num_nodes: int) -> "CostMap":
        return cls(np.zeros(num_nodes, dtype=np.float64), np.zeros(num_nodes, dtype=np.int32))

    def copy(self) -> "CostMap":
        return CostMap(self.marker.copy(), self.occupancy.copy())


@dataclass(frozen=True)
class Route:
    """A routed net: one node list per 2-pin connection, in connection order."""

    net_id: str
    segments: tuple[tuple[int, ...], ...]
    cost: float

    @property
    def nodes(self) -> frozenset[int]:
        return frozenset(itertools.chain.from_iterable(self.segments))

    def planar_edges(self, design: Design) -> int:
        rc = design.grid.num_rows * design.grid.num_cols
        count = 0
        for seg in self.segments:
            for u, v in zip(seg, seg[1:]):
                if u // rc == v // rc:
                    count += 1
        return count


@dataclass(frozen=True, order=True)
class Violation:
    node: Node
    kind: str
    nets: tuple[str, ...]


@dataclass(frozen=True)
class IterationState:
    iteration: int
    weights: WeightVector
    partition_drvs: tuple[int, ...]
    max_partition_drv: int
    neighbor_drvs: tuple[int, ...]
    total_drvs: int
    total_wirelength_um: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights.as_tuple())
        d["partition_drvs"] = list(self.partition_drvs)
        d["neighbor_drvs"] = list(self.neighbor_drvs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IterationState":
        return cls(
            iteration=int(d["iteration"]),
            weights=WeightVector(*(float(x) for x in d["weights"])),
            partition_drvs=tuple(int(x) for x in d["partition_drvs"]),
            max_partition_drv=int(d["max_partition_drv"]),
            neighbor_drvs=tuple(int(x) for x in d["neighbor_drvs"]),
            total_drvs=int(d["total_drvs"]),
            total_wirelength_um=float(d["total_wirelength_um"]),
        )


@dataclass
class Trajectory:
    design_name: str
    static: StaticFeatures
    states: list[IterationState] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.states)

    def dumps(self) -> str:
        """JSON-lines form: a header line, then one record per iteration."""
        header = {
            "design_name": self.design_name,
            "static": self.static.as_list(),
            "converged": self.converged,
            "iterations": len(self.states),
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(s.to_dict(), sort_keys=True) for s in self.states]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Trajectory":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        header, records = rows[0], rows[1:]
        return cls(
            header["design_name"],
            StaticFeatures(*header["static"]),
            [IterationState.from_dict(r) for r in records],
            bool(header["converged"]),
        )


WeightPolicy = Callable[[int, Sequence[IterationState]], WeightVector]


# -- routing ----------------------------------------------------------------


def conflict_counts(design: Design, occupancy: np.ndarray, spacing: bool = True) -> np.ndarray:
    """Potential violations from entering each node: overlaps plus parallel-track neighbors."""
    if not spacing:
        return occupancy.astype(np.float64)
    occ = occupancy.reshape(design.grid.shape)
    out = occ.astype(np.float64)
    for l in range(occ.shape[0]):
        if l % 2 == 0:
            out[l, 1:, :] += occ[l, :-1, :]
            out[l, :-1, :] += occ[l, 1:, :]
        else:
            out[l, :, 1:] += occ[l, :, :-1]
            out[l, :, :-1] += occ[l, :, 1:]
    return out.reshape(-1)


def entry_costs(design: Design, cost_map: CostMap, weights: WeightVector,
                config: "RouterConfig" = None) -> np.ndarray:
    """Per-node cost of stepping onto a node, excluding the edge's base cost."""
    config = config or DEFAULT_ROUTER_CONFIG
    return (
        cost_map.marker
        + weights.drc_cost * conflict_counts(design, cost_map.occupancy, config.spacing_aware)
        + weights.fixed_shape_cost * design.grid.near_obstacle
    )


def route_net(
    design: Design,
    cost_map: CostMap,
    weights: WeightVector,
    net: Net,
    config: RouterConfig = DEFAULT_ROUTER_CONFIG,
    astar=None,
) -> Route:
    """Route ``net`` as a tree of cheapest 2-pin connections.

    ``cost_map.occupancy`` must not include ``net`` itself. The tree starts at
    the first pin; each step connects the remaining pin closest (Manhattan, with
    layers) to the tree, ties going to the lower pin index.
    """
    astar = astar or kernels.astar
    grid = design.grid
    L, R, C = grid.shape
    entry = entry_costs(design, cost_map, weights, config)
    pins = [grid.index(p) for p in net.pins]
    tree = [pins[0]]
    in_tree = {pins[0]}
    remaining = pins[1:]
    segments = []
    total = 0.0
    while remaining:
        pick = min(range(len(remaining)), key=lambda i: (_tree_distance(grid, remaining[i], tree), i))
        target = remaining.pop(pick)
        if target in in_tree:
            continue
        path, cost = astar(tree, target, entry, grid.blocked, L, R, C,
                           config.base_cost, config.wrong_way_factor, config.via_cost)
        if not path:
            raise UnroutableError(f"net {net.id!r}: pin {grid.node(target)} unreachable")
        segments.append(tuple(path))
        total += cost
        for v in path:
            if v not in in_tree:
                in_tree.add(v)
                tree.append(v)
    return Route(net.id, tuple(segments), total)


def _tree_distance(grid, node: int, tree: Sequence[int]) -> int:
    l, r, c = grid.node(node)
    best = math.inf
    for t in tree:
        tl, tr, tc = grid.node(t)
        d = abs(l - tl) + abs(r - tr) + abs(c - tc)
        if d < best:
            best = d
    return best


# -- design rule check ------------------------------------------------------


def _node_nets(design: Design, routes: Mapping[str, Iterable[int] | Route]) -> dict[int, list[str]]:
    users: dict[int, list[str]] = {}
    for net_id in sorted(routes):
        r = routes[net_id]
        nodes = r.nodes if isinstance(r, Route) else set(r)
        for v in nodes:
            users.setdefault(v, []).append(net_id)
    return users


def run_drc(design: Design, routes: Mapping[str, Iterable[int] | Route]) -> list[Violation]:
    """Shorts, parallel-track spacing conflicts and fixed-shape conflicts.

    ``routes`` maps net id to a :class:`Route` or to an iterable of flat node
    indices. Output is sorted by (layer, row, col, kind, nets).
    """
    grid = design.grid
    L, R, C = grid.shape
    near = grid.near_obstacle
    users = _node_nets(design, routes)
    found: set[Violation] = set()
    for v, nets in users.items():
        node = grid.node(v)
        if len(nets) > 1:
            for a, b in itertools.combinations(sorted(set(nets)), 2):
                found.add(Violation(node, SHORT, (a, b)))
        if near[v]:
            for a in set(nets):
                found.add(Violation(node, FIXED_SHAPE, (a,)))
        l, r, c = node
        # only the track-to-track direction counts: rows on horizontal layers
        if grid.layers[l].preferred_direction == HORIZONTAL:
            other = (l, r + 1, c) if r + 1 < R else None
        else:
            other = (l, r, c + 1) if c + 1 < C else None
        if other is None:
            continue
        other_nets = users.get(grid.index(other))
        if not other_nets:
            continue
        for a in nets:
            for b in other_nets:
                if a != b:
                    found.add(Violation(node, SPACING, tuple(sorted((a, b)))))
    return sorted(found)


# -- cost map ----------------------------------------------------------------


def update_cost_map(design: Design, cost_map: CostMap, violations: Iterable[Violation],
                    weights: WeightVector) -> CostMap:
    """Decay every marker, then add violation costs at and around each violation.

    Mutates and returns ``cost_map``.
    """
    grid = design.grid
    marker = cost_map.marker
    marker *= weights.marker_decay
    for viol in violations:
        centre = weights.fixed_shape_cost if viol.kind == FIXED_SHAPE else weights.drc_cost
        marker[grid.index(viol.node)] += centre
        for nb in grid.planar_neighbors(viol.node):
            marker[grid.index(nb)] += weights.marker_cost
    return cost_map


# -- partitions ----------------------------------------------------------------


def partition_grid(design_or_grid, tile_size: int = 8) -> tuple[int, int]:
    grid = getattr(design_or_grid, "grid", design_or_grid)
    return (-(-grid.num_rows // tile_size), -(-grid.num_cols // tile_size))


def partition_stats(violations: Iterable[Violation], grid, tile_size: int = 8):
    """Per-tile violation counts, their maximum, and 4-adjacent tile sums.

    Tiles are ``tile_size`` x ``tile_size`` nodes through all layers, numbered
    row-major.
    """
    grid = getattr(grid, "grid", grid)
    tr, tc = partition_grid(grid, tile_size)
    counts = np.zeros((tr, tc), dtype=np.int64)
    for viol in violations:
        _, r, c = viol.node
        counts[r // tile_size, c // tile_size] += 1
    neigh = np.zeros_like(counts)
    neigh[1:, :] += counts[:-1, :]
    neigh[:-1, :] += counts[1:, :]
    neigh[:, 1:] += counts[:, :-1]
    neigh[:, :-1] += counts[:, 1:]
    flat = tuple(int(x) for x in counts.reshape(-1))
    return flat, max(flat), tuple(int(x) for x in neigh.reshape(-1))


# -- flow ----------------------------------------------------------------


class FlowContext:
    """Mutable state of one routing flow over an immutable :class:`Design`."""

    def __init__(self, design: Design, config: RouterConfig = DEFAULT_ROUTER_CONFIG, astar=None):
        self.design = design
        self.config = config
        self.astar = astar
        self.routes: dict[str, Route] = {}
        self.cost_map = CostMap.empty(design.grid.num_nodes)
        self.violations: list[Violation] = []
        self.iteration = 0
        self.last_ripped: list[str] = []

    def _rip(self, net_id: str) -> None:
        route = self.routes.pop(net_id, None)
        if route is not None:
            idx = np.fromiter(route.nodes, dtype=np.int64)
            self.cost_map.occupancy[idx] -= 1

    def _place(self, route: Route) -> None:
        self.routes[route.net_id] = route
        idx = np.fromiter(route.nodes, dtype=np.int64)
        self.cost_map.occupancy[idx] += 1

    def nets_to_reroute(self) -> list[str]:
        if self.iteration == 0:
            return sorted(n.id for n in self.design.nets)
        hot = set()
        for viol in self.violations:
            hot.update(viol.nets)
        marked = self.cost_map.marker > 0
        for net_id, route in self.routes.items():
            if net_id not in hot and any(marked[v] for v in route.nodes):
                hot.add(net_id)
        return sorted(hot)


def run_iteration(ctx: FlowContext, weights: WeightVector) -> IterationState:
    design = ctx.design
    todo = ctx.nets_to_reroute()
    if ctx.config.ripup_mode == "batch":
        for net_id in todo:
            ctx._rip(net_id)
    for net_id in todo:
        ctx._rip(net_id)
        ctx._place(route_net(design, ctx.cost_map, weights, design.net(net_id), ctx.config, ctx.astar))
    ctx.last_ripped = todo
    ctx.violations = run_drc(design, ctx.routes)
    update_cost_map(design, ctx.cost_map, ctx.violations, weights)
    parts, worst, neigh = partition_stats(ctx.violations, design.grid, ctx.config.tile_size)
    edges = sum(ctx.routes[n].planar_edges(design) for n in sorted(ctx.routes))
    state = IterationState(
        iteration=ctx.iteration,
        weights=weights,
        partition_drvs=parts,
        max_partition_drv=worst,
        neighbor_drvs=neigh,
        total_drvs=len(ctx.violations),
        total_wirelength_um=edges * design.grid.pitch_um,
    )
    ctx.iteration += 1
    return state


def run_flow(
    design: Design,
    weight_policy: WeightPolicy,
    max_iterations: int | None = None,
    config: RouterConfig = DEFAULT_ROUTER_CONFIG,
    astar=None,
    on_iteration: Callable[[IterationState], None] | None = None,
) -> Trajectory:
    """Route until zero violations or ``max_iterations`` states.

    ``weight_policy(iteration, states_so_far)`` picks the weights for each
    iteration.
    """
    cap = config.max_iterations if max_iterations is None else max_iterations
    if cap < 1:
        raise ValueError("max_iterations must be >= 1")
    ctx = FlowContext(design, config, astar)
    traj = Trajectory(design.name, static_features(design))
    while len(traj.states) < cap:
        weights = weight_policy(ctx.iteration, traj.states)
        state = run_iteration(ctx, weights)
        traj.states.append(state)
        if on_iteration is not None:
            on_iteration(state)
        if state.total_drvs == 0:
            break
    traj.converged = traj.states[-1].total_drvs == 0
    return traj
