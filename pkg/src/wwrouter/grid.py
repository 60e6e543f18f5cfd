"""Routing problem instances: grid graph, nets, macros and static design features.

Nodes are addressed as ``(layer, row, col)`` tuples in the public API. Internally
the router works on flat indices ``layer * rows * cols + row * cols + col``.
Even layers prefer horizontal wires (along columns), odd layers vertical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

Node = tuple[int, int, int]

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


class DesignError(ValueError):
    """Raised for malformed or invalid design descriptions."""


@dataclass(frozen=True)
class Layer:
    index: int
    preferred_direction: str

    @classmethod
    def for_index(cls, index: int) -> "Layer":
        return cls(index, HORIZONTAL if index % 2 == 0 else VERTICAL)


@dataclass(frozen=True)
class Macro:
    """Inclusive box of obstacle nodes ``[l0..l1] x [r0..r1] x [c0..c1]``."""

    l0: int
    r0: int
    c0: int
    l1: int
    r1: int
    c1: int

    def nodes(self) -> Iterable[Node]:
        for l in range(self.l0, self.l1 + 1):
            for r in range(self.r0, self.r1 + 1):
                for c in range(self.c0, self.c1 + 1):
                    yield (l, r, c)

    def as_list(self) -> list[int]:
        return [self.l0, self.r0, self.c0, self.l1, self.r1, self.c1]


@dataclass(frozen=True)
class GridGraph:
    num_layers: int
    num_rows: int
    num_cols: int
    pitch_um: float = 1.0
    obstacles: frozenset[Node] = frozenset()

    def __post_init__(self):
        if min(self.num_layers, self.num_rows, self.num_cols) < 1:
            raise DesignError("grid dimensions must be positive")
        if not self.pitch_um > 0:
            raise DesignError("pitch_um must be positive")
        for node in self.obstacles:
            if not self.in_bounds(node):
                raise DesignError(f"obstacle {node} out of bounds")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.num_layers, self.num_rows, self.num_cols)

    @property
    def num_nodes(self) -> int:
        return self.num_layers * self.num_rows * self.num_cols

    @property
    def layers(self) -> list[Layer]:
        return [Layer.for_index(i) for i in range(self.num_layers)]

    def in_bounds(self, node: Sequence[int]) -> bool:
        l, r, c = node
        return 0 <= l < self.num_layers and 0 <= r < self.num_rows and 0 <= c < self.num_cols

    def index(self, node: Sequence[int]) -> int:
        l, r, c = node
        return (l * self.num_rows + r) * self.num_cols + c

    def node(self, index: int) -> Node:
        lr, c = divmod(int(index), self.num_cols)
        l, r = divmod(lr, self.num_rows)
        return (l, r, c)

    def planar_neighbors(self, node: Node) -> Iterable[Node]:
        """Same-layer 4-neighbors that fall inside the grid."""
        l, r, c = node
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < self.num_rows and 0 <= cc < self.num_cols:
                yield (l, rr, cc)

    @cached_property
    def blocked(self) -> np.ndarray:
        mask = np.zeros(self.num_nodes, dtype=np.uint8)
        for node in self.obstacles:
            mask[self.index(node)] = 1
        return mask

    @cached_property
    def near_obstacle(self) -> np.ndarray:
        """1 where a node has a same-layer 4-neighbor that is an obstacle."""
        blk = self.blocked.reshape(self.shape).astype(bool)
        near = np.zeros_like(blk)
        near[:, 1:, :] |= blk[:, :-1, :]
        near[:, :-1, :] |= blk[:, 1:, :]
        near[:, :, 1:] |= blk[:, :, :-1]
        near[:, :, :-1] |= blk[:, :, 1:]
        return near.reshape(-1).astype(np.uint8)


@dataclass(frozen=True)
class Net:
    id: str
    pins: tuple[Node, ...]

    def __post_init__(self):
        if len(self.pins) < 2:
            raise DesignError(f"net {self.id!r} needs at least 2 pins")


@dataclass(frozen=True)
class StaticFeatures:
    die_area_um2: float
    total_pins: float
    pin_density: float
    num_macros: float
    instance_density: float
    num_nets: float
    avg_pins_per_net: float
    net_density: float
    num_routing_layers: float

    def as_list(self) -> list[float]:
        return [
            self.die_area_um2,
            self.total_pins,
            self.pin_density,
            self.num_macros,
            self.instance_density,
            self.num_nets,
            self.avg_pins_per_net,
            self.net_density,
            self.num_routing_layers,
        ]


@dataclass(frozen=True)
class Design:
    """A validated routing instance.

    ``obstacles`` holds the explicitly listed blockage nodes; ``grid.obstacles``
    is their union with every macro node.
    """

    name: str
    grid: GridGraph
    nets: tuple[Net, ...]
    macros: tuple[Macro, ...] = ()
    obstacles: frozenset[Node] = field(default=frozenset())

    def __post_init__(self):
        seen_ids = set()
        seen_pins: dict[Node, str] = {}
        for m in self.macros:
            if not (self.grid.in_bounds((m.l0, m.r0, m.c0)) and self.grid.in_bounds((m.l1, m.r1, m.c1))):
                raise DesignError(f"macro {m.as_list()} outside die bounds")
            if m.l0 > m.l1 or m.r0 > m.r1 or m.c0 > m.c1:
                raise DesignError(f"macro {m.as_list()} has inverted bounds")
        for net in self.nets:
            if net.id in seen_ids:
                raise DesignError(f"duplicate net id {net.id!r}")
            seen_ids.add(net.id)
            for pin in net.pins:
                if not self.grid.in_bounds(pin):
                    raise DesignError(f"net {net.id!r}: pin {pin} out of bounds")
                if pin in self.grid.obstacles:
                    raise DesignError(f"net {net.id!r}: pin {pin} on obstacle")
                if pin in seen_pins:
                    raise DesignError(f"pin {pin} shared by nets {seen_pins[pin]!r} and {net.id!r}")
                seen_pins[pin] = net.id

    @classmethod
    def build(
        cls,
        name: str,
        shape: tuple[int, int, int],
        nets: Iterable[Net],
        macros: Iterable[Macro] = (),
        obstacles: Iterable[Sequence[int]] = (),
        pitch_um: float = 1.0,
    ) -> "Design":
        macros = tuple(macros)
        explicit = frozenset(tuple(int(v) for v in o) for o in obstacles)
        all_obs = set(explicit)
        for m in macros:
            all_obs.update(m.nodes())
        grid = GridGraph(*shape, pitch_um=float(pitch_um), obstacles=frozenset(all_obs))
        return cls(name, grid, tuple(nets), macros, explicit)

    @property
    def total_pins(self) -> int:
        return sum(len(n.pins) for n in self.nets)

    def net(self, net_id: str) -> Net:
        return self._net_index[net_id]

    @cached_property
    def _net_index(self) -> dict[str, Net]:
        return {n.id: n for n in self.nets}

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "layers": self.grid.num_layers,
            "rows": self.grid.num_rows,
            "cols": self.grid.num_cols,
            "pitch_um": self.grid.pitch_um,
            "obstacles": [list(o) for o in sorted(self.obstacles)],
            "macros": [m.as_list() for m in self.macros],
            "nets": [{"id": n.id, "pins": [list(p) for p in n.pins]} for n in self.nets],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Design":
        try:
            shape = (int(doc["layers"]), int(doc["rows"]), int(doc["cols"]))
            nets = [Net(str(n["id"]), tuple(_node(p) for p in n["pins"])) for n in doc["nets"]]
            macros = [Macro(*(int(v) for v in m)) for m in doc.get("macros", [])]
            obstacles = [_node(o) for o in doc.get("obstacles", [])]
            return cls.build(
                str(doc["name"]), shape, nets, macros, obstacles, float(doc.get("pitch_um", 1.0))
            )
        except DesignError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise DesignError(f"malformed design document: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"


def _node(value) -> Node:
    if len(value) != 3:
        raise DesignError(f"node {value!r} must have 3 coordinates")
    return (int(value[0]), int(value[1]), int(value[2]))


def load_design(path: str | Path) -> Design:
    """Read and validate a design file (JSON)."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DesignError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DesignError(f"{path}: top level must be an object")
    return Design.from_dict(doc)


def save_design(design: Design, path: str | Path) -> None:
    Path(path).write_text(design.dumps())


def static_features(design: Design) -> StaticFeatures:
    grid = design.grid
    area = grid.num_rows * grid.num_cols * grid.pitch_um**2
    pins = design.total_pins
    nets = len(design.nets)
    free_nodes = grid.num_nodes - len(grid.obstacles)
    return StaticFeatures(
        die_area_um2=float(area),
        total_pins=float(pins),
        pin_density=pins / area,
        num_macros=float(len(design.macros)),
        instance_density=pins / free_nodes if free_nodes else 0.0,
        num_nets=float(nets),
        avg_pins_per_net=pins / nets if nets else 0.0,
        net_density=nets / area,
        num_routing_layers=float(grid.num_layers),
    )


# -- synthetic generation ---------------------------------------------------


@dataclass(frozen=True)
class GenConfig:
    """Parameters for :func:`generate_synthetic_design`.

    ``profile="congested"`` carves a macro band across the middle of the die on
    the lowest two layers, leaving ``corridors`` narrow vertical gaps, and puts
    the two end pins of every net on opposite sides of the band.
    """

    layers: int = 3
    rows: int = 24
    cols: int = 24
    num_nets: int = 20
    max_pins_per_net: int = 3
    obstacle_density: float = 0.1
    profile: str = "easy"
    corridors: int = 2
    corridor_width: int = 3
    pitch_um: float = 1.0
    name: str | None = None

    def validate(self) -> None:
        if self.layers < 2:
            raise DesignError("need at least 2 layers")
        if self.num_nets < 1:
            raise DesignError("need at least 1 net")
        if not 0.0 <= self.obstacle_density <= 0.3:
            raise DesignError("obstacle_density must lie in [0, 0.3]")
        if self.max_pins_per_net < 2:
            raise DesignError("max_pins_per_net must be >= 2")
        if self.profile not in ("easy", "congested"):
            raise DesignError(f"unknown profile {self.profile!r}")


PROFILES = {
    "easy": GenConfig(layers=2, rows=16, cols=16, num_nets=6, obstacle_density=0.0, profile="easy"),
    "congested": GenConfig(
        layers=3,
        rows=20,
        cols=20,
        num_nets=10,
        max_pins_per_net=3,
        obstacle_density=0.1,
        profile="congested",
        corridors=3,
        corridor_width=3,
    ),
}

_MAX_PIN_ATTEMPTS = 200


def generate_synthetic_design(seed: int, cfg: GenConfig) -> Design:
    """Deterministic synthetic design from ``(seed, cfg)``.

    Pins sit on layer 0, never on or next to an obstacle, and never 4-adjacent to
    a pin of another net (either would be an unfixable violation).
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    L, R, C = cfg.layers, cfg.rows, cfg.cols
    macro_layers = (0, min(1, L - 1))

    macros: list[Macro] = []
    band: tuple[int, int] | None = None
    if cfg.obstacle_density > 0:
        if cfg.profile == "congested":
            macros, band = _corridor_macros(rng, cfg, macro_layers)
        else:
            macros = _random_macros(rng, cfg, macro_layers)

    obstacle_2d = np.zeros((R, C), dtype=bool)
    for m in macros:
        obstacle_2d[m.r0 : m.r1 + 1, m.c0 : m.c1 + 1] = True
    forbidden = obstacle_2d.copy()
    forbidden[1:, :] |= obstacle_2d[:-1, :]
    forbidden[:-1, :] |= obstacle_2d[1:, :]
    forbidden[:, 1:] |= obstacle_2d[:, :-1]
    forbidden[:, :-1] |= obstacle_2d[:, 1:]

    pin_counts = rng.integers(2, cfg.max_pins_per_net + 1, size=cfg.num_nets)
    free = int((~forbidden).sum())
    if int(pin_counts.sum()) > free:
        raise DesignError(f"infeasible config: {int(pin_counts.sum())} pins but {free} free nodes")

    owner = np.full((R, C), -1, dtype=np.int64)
    nets = []
    width = len(str(max(cfg.num_nets - 1, 0)))
    for k in range(cfg.num_nets):
        pins: list[Node] = []
        for p in range(int(pin_counts[k])):
            side = None
            if band is not None and p < 2:
                side = "top" if (p == 0) == bool(k % 2) else "bottom"
            pins.append(_place_pin(rng, owner, forbidden, k, band, side))
        nets.append(Net(f"n{k:0{width}d}", tuple(pins)))

    name = cfg.name or f"{cfg.profile}_{seed}"
    return Design.build(name, (L, R, C), nets, macros, (), cfg.pitch_um)


def _place_pin(rng, owner, forbidden, net_idx, band, side) -> Node:
    R, C = owner.shape
    lo, hi = 0, R
    if side == "top":
        hi = band[0]
    elif side == "bottom":
        lo = band[1] + 1
    for _ in range(_MAX_PIN_ATTEMPTS):
        r = int(rng.integers(lo, hi))
        c = int(rng.integers(0, C))
        if forbidden[r, c] or owner[r, c] != -1:
            continue
        clash = False
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < R and 0 <= cc < C and owner[rr, cc] not in (-1, net_idx):
                clash = True
                break
        if clash:
            continue
        owner[r, c] = net_idx
        return (0, r, c)
    raise DesignError("infeasible config: could not place pins without conflicts")


def _random_macros(rng, cfg: GenConfig, macro_layers) -> list[Macro]:
    R, C = cfg.rows, cfg.cols
    target = cfg.obstacle_density * R * C
    covered = np.zeros((R, C), dtype=bool)
    macros = []
    for _ in range(64):
        if covered.sum() >= target:
            break
        h = int(rng.integers(2, max(3, R // 4) + 1))
        w = int(rng.integers(2, max(3, C // 4) + 1))
        r0 = int(rng.integers(1, max(2, R - h - 1)))
        c0 = int(rng.integers(1, max(2, C - w - 1)))
        r1, c1 = min(r0 + h - 1, R - 2), min(c0 + w - 1, C - 2)
        # keep a one-node moat between macros so no region is sealed off
        if covered[max(r0 - 2, 0) : r1 + 3, max(c0 - 2, 0) : c1 + 3].any():
            continue
        covered[r0 : r1 + 1, c0 : c1 + 1] = True
        macros.append(Macro(macro_layers[0], r0, c0, macro_layers[1], r1, c1))
    return macros


def _corridor_macros(rng, cfg: GenConfig, macro_layers):
    R, C = cfg.rows, cfg.cols
    height = max(2, int(round(cfg.obstacle_density * R)))
    top = (R - height) // 2
    bottom = top + height - 1
    n_gap = max(1, cfg.corridors)
    w = cfg.corridor_width
    slot = C // n_gap
    gaps = []
    for g in range(n_gap):
        lo = g * slot + 1
        hi = max(lo + 1, (g + 1) * slot - w)
        gaps.append(int(rng.integers(lo, hi)))
    macros = []
    c = 0
    for g in gaps:
        if g > c:
            macros.append(Macro(macro_layers[0], top, c, macro_layers[1], bottom, g - 1))
        c = g + w
    if c < C:
        macros.append(Macro(macro_layers[0], top, c, macro_layers[1], bottom, C - 1))
    return macros, (top, bottom)
