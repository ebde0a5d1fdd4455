"""Layered multimodal graphs: PT, taxi and walk layers joined by transfer edges.

Edge attributes are stored column-wise in numpy arrays so the assignment code
can evaluate travel times and costs without touching Python objects. Edge ids
are the positional index of the edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


class Mode(IntEnum):
    PT = 1
    TAXI = 2
    WALK = 3


MODE_NAMES = {Mode.PT: "pt", Mode.TAXI: "taxi", Mode.WALK: "walk"}
_MODE_BY_NAME = {v: k for k, v in MODE_NAMES.items()}


def mode_from_name(name: str | int | Mode) -> Mode:
    if isinstance(name, (Mode, int)):
        return Mode(name)
    try:
        return _MODE_BY_NAME[name.lower()]
    except KeyError:
        raise ValueError(f"unknown mode {name!r}") from None


@dataclass(frozen=True)
class Service:
    mode: Mode

    def __str__(self) -> str:
        return f"service:{MODE_NAMES[self.mode]}"


@dataclass(frozen=True)
class Transfer:
    src: Mode
    dst: Mode

    def __str__(self) -> str:
        return f"transfer:{MODE_NAMES[self.src]}:{MODE_NAMES[self.dst]}"


EdgeKind = Service | Transfer


def parse_kind(text: str) -> EdgeKind:
    parts = text.split(":")
    if parts[0] == "service" and len(parts) == 2:
        return Service(mode_from_name(parts[1]))
    if parts[0] == "transfer" and len(parts) == 3:
        return Transfer(mode_from_name(parts[1]), mode_from_name(parts[2]))
    raise ValueError(f"malformed edge kind {text!r}")


@dataclass(frozen=True)
class EdgeLabel:
    """Price (CHF), distance (km), fixed and free-flow time (h), capacity (travelers/h)."""

    price: float = 0.0
    distance: float = 0.0
    fixed_time: float = 0.0
    freeflow_time: float = 0.0
    capacity: float = 0.0
    bpr_a: float = 0.15
    bpr_b: float = 4.0


@dataclass(frozen=True)
class Edge:
    id: int
    tail: int
    head: int
    kind: EdgeKind
    label: EdgeLabel

    @property
    def congestible(self) -> bool:
        return self.kind == Service(Mode.TAXI)


@dataclass(frozen=True)
class Vertex:
    id: int
    mode: Mode
    x: float | None = None
    y: float | None = None


@dataclass(frozen=True)
class Violation:
    message: str
    edge: int | None = None
    vertex: int | None = None

    def __str__(self) -> str:
        where = ""
        if self.edge is not None:
            where = f"edge {self.edge}: "
        elif self.vertex is not None:
            where = f"vertex {self.vertex}: "
        return where + self.message


class ScenarioError(ValueError):
    """Raised when a scenario, graph or demand fails validation."""

    def __init__(self, message: str, violations: Sequence[Violation] = ()):
        self.violations = list(violations)
        if self.violations:
            message += "\n" + "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(message)


_LABEL_FIELDS = ("price", "distance", "fixed_time", "freeflow_time", "capacity", "bpr_a", "bpr_b")


class MultimodalGraph:
    """Directed labeled graph with one layer per mode.

    Instances are treated as immutable. ``with_labels`` returns a new graph
    sharing topology with replaced label columns, which is how operator
    strategies are written onto a template network.
    """

    def __init__(
        self,
        vertices: Sequence[Vertex],
        tails: Sequence[int],
        heads: Sequence[int],
        kinds: Sequence[EdgeKind],
        labels: dict[str, np.ndarray] | Sequence[EdgeLabel],
    ):
        self.vertices = tuple(vertices)
        self.tail = np.asarray(tails, dtype=np.int64)
        self.head = np.asarray(heads, dtype=np.int64)
        self.kinds = tuple(kinds)
        n = len(self.kinds)
        if len(self.tail) != n or len(self.head) != n:
            raise ValueError("tails, heads and kinds must have equal length")
        if isinstance(labels, dict):
            cols = {k: np.asarray(labels[k], dtype=float).copy() for k in _LABEL_FIELDS}
        else:
            labels = list(labels)
            if len(labels) != n:
                raise ValueError("one label per edge required")
            cols = {k: np.array([getattr(lab, k) for lab in labels], dtype=float) for k in _LABEL_FIELDS}
        for k in _LABEL_FIELDS:
            if cols[k].shape != (n,):
                raise ValueError(f"label column {k} has wrong shape")
            cols[k].setflags(write=False)
            setattr(self, k, cols[k])
        self.tail.setflags(write=False)
        self.head.setflags(write=False)

    @classmethod
    def from_edges(cls, vertices: Sequence[Vertex], edges: Iterable[Edge]) -> MultimodalGraph:
        edges = sorted(edges, key=lambda e: e.id)
        if [e.id for e in edges] != list(range(len(edges))):
            raise ValueError("edge ids must be 0..n-1")
        return cls(vertices, [e.tail for e in edges], [e.head for e in edges],
                   [e.kind for e in edges], [e.label for e in edges])

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.kinds)

    def edge(self, eid: int) -> Edge:
        lab = EdgeLabel(**{k: float(getattr(self, k)[eid]) for k in _LABEL_FIELDS})
        return Edge(eid, int(self.tail[eid]), int(self.head[eid]), self.kinds[eid], lab)

    @property
    def edges(self) -> list[Edge]:
        return [self.edge(i) for i in range(self.n_edges)]

    @cached_property
    def vertex_mode(self) -> np.ndarray:
        return np.array([int(v.mode) for v in self.vertices], dtype=np.int64)

    @cached_property
    def out_edges(self) -> tuple[tuple[int, ...], ...]:
        """Outgoing edge ids per vertex, sorted by id."""
        adj: list[list[int]] = [[] for _ in self.vertices]
        for eid, t in enumerate(self.tail.tolist()):
            adj[t].append(eid)
        return tuple(tuple(a) for a in adj)

    @cached_property
    def congestible(self) -> np.ndarray:
        """Mask of taxi service edges; the only flow-dependent edges."""
        taxi = Service(Mode.TAXI)
        return np.array([k == taxi for k in self.kinds], dtype=bool)

    @cached_property
    def _kind_masks(self) -> dict[EdgeKind, np.ndarray]:
        masks: dict[EdgeKind, np.ndarray] = {}
        for kind in set(self.kinds):
            m = np.array([k == kind for k in self.kinds], dtype=bool)
            m.setflags(write=False)
            masks[kind] = m
        return masks

    def mask(self, kind: EdgeKind) -> np.ndarray:
        """Boolean edge mask for one edge kind (read-only)."""
        m = self._kind_masks.get(kind)
        return m if m is not None else np.zeros(self.n_edges, dtype=bool)

    def service_edges(self, mode: Mode) -> np.ndarray:
        return np.flatnonzero(self.mask(Service(Mode(mode))))

    def vertices_in(self, mode: Mode) -> list[int]:
        return [v.id for v in self.vertices if v.mode == mode]

    def with_labels(self, **columns: np.ndarray) -> MultimodalGraph:
        unknown = set(columns) - set(_LABEL_FIELDS)
        if unknown:
            raise TypeError(f"unknown label columns {sorted(unknown)}")
        cols = {k: columns.get(k, getattr(self, k)) for k in _LABEL_FIELDS}
        g = MultimodalGraph.__new__(MultimodalGraph)
        g.vertices, g.tail, g.head, g.kinds = self.vertices, self.tail, self.head, self.kinds
        for k, v in cols.items():
            arr = np.array(v, dtype=float)
            if arr.shape != (self.n_edges,):
                raise ValueError(f"label column {k} has wrong shape")
            arr.setflags(write=False)
            setattr(g, k, arr)
        # topology-only caches are built once on the template and shared
        for name in ("vertex_mode", "out_edges", "congestible", "_kind_masks"):
            g.__dict__[name] = getattr(self, name)
        return g

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MultimodalGraph):
            return NotImplemented
        return (
            self.vertices == other.vertices
            and self.kinds == other.kinds
            and np.array_equal(self.tail, other.tail)
            and np.array_equal(self.head, other.head)
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in _LABEL_FIELDS)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        counts = {MODE_NAMES[m]: int(np.sum(self.vertex_mode == m)) for m in Mode}
        return f"MultimodalGraph(vertices={counts}, edges={self.n_edges})"


def transfer_edges(graph: MultimodalGraph, src: Mode, dst: Mode) -> list[int]:
    """Ids of the Transfer(src, dst) edges, ascending."""
    src, dst = Mode(src), Mode(dst)
    if src == dst:
        raise ValueError(f"transfer edges must join distinct modes, got {src.name} twice")
    return np.flatnonzero(graph.mask(Transfer(src, dst))).tolist()


def validate(graph: MultimodalGraph) -> list[Violation]:
    """Every invariant breach in ``graph``; an empty list means valid."""
    out: list[Violation] = []
    modes = graph.vertex_mode
    for i, v in enumerate(graph.vertices):
        if v.id != i:
            out.append(Violation(f"vertex id {v.id} at position {i}", vertex=i))
    n = graph.n_vertices
    for eid in range(graph.n_edges):
        t, h, kind = int(graph.tail[eid]), int(graph.head[eid]), graph.kinds[eid]
        if not (0 <= t < n and 0 <= h < n):
            out.append(Violation("endpoint out of range", edge=eid))
            continue
        if t == h:
            out.append(Violation("self-loop", edge=eid))
        if isinstance(kind, Service):
            if modes[t] != kind.mode or modes[h] != kind.mode:
                out.append(Violation(
                    f"{kind} edge joins {Mode(modes[t]).name} -> {Mode(modes[h]).name} vertices", edge=eid))
        else:
            if kind.src == kind.dst:
                out.append(Violation(f"{kind} does not cross layers", edge=eid))
            elif modes[t] != kind.src or modes[h] != kind.dst:
                out.append(Violation(
                    f"{kind} edge joins {Mode(modes[t]).name} -> {Mode(modes[h]).name} vertices", edge=eid))
        for k in _LABEL_FIELDS:
            val = float(getattr(graph, k)[eid])
            if np.isnan(val) or val < 0:
                out.append(Violation(f"label {k}={val} must be >= 0", edge=eid))
        if kind == Service(Mode.TAXI) and not graph.capacity[eid] > 0:
            out.append(Violation("taxi service edge needs positive capacity", edge=eid))
        if isinstance(kind, Transfer) and kind.dst == Mode.WALK:
            if graph.price[eid] != 0 or graph.fixed_time[eid] != 0 or graph.freeflow_time[eid] != 0:
                out.append(Violation("transfer into walk must be free and instantaneous", edge=eid))
    if out:
        return out
    walk = graph.vertices_in(Mode.WALK)
    if len(walk) > 1:
        adj = csr_matrix((np.ones(graph.n_edges), (graph.tail, graph.head)), shape=(n, n))
        _, comp = connected_components(adj, directed=True, connection="strong")
        if len({int(comp[w]) for w in walk}) > 1:
            out.append(Violation("walk layer is not mutually reachable"))
    return out


@dataclass(frozen=True)
class ScenarioParams:
    """Label defaults for the grid generator.

    Speeds are km/h, capacities travelers/h. PT corridors run along the listed
    rows and columns of the grid.
    """

    spacing_km: float = 1.0
    walk_speed: float = 5.0
    taxi_speed: float = 30.0
    pt_speed: float = 20.0
    taxi_capacity: float = 100.0
    bpr_a: float = 0.15
    bpr_b: float = 4.0
    pt_rows: tuple[int, ...] = (0,)
    pt_cols: tuple[int, ...] = ()
    length_jitter: float = 0.0

    def check(self) -> list[str]:
        errs = []
        for name in ("spacing_km", "walk_speed", "taxi_speed", "pt_speed", "taxi_capacity"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0:
                errs.append(f"{name} must be positive, got {val}")
        if self.bpr_a < 0 or self.bpr_b < 0:
            errs.append("BPR parameters must be non-negative")
        if not 0 <= self.length_jitter < 1:
            errs.append("length_jitter must lie in [0, 1)")
        return errs

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScenarioParams:
        data = dict(data)
        for k in ("pt_rows", "pt_cols"):
            if k in data:
                data[k] = tuple(int(i) for i in data[k])
        return cls(**data)


def build_grid_scenario(rows: int, cols: int, params: ScenarioParams | None = None,
                        seed: int = 0) -> MultimodalGraph:
    """Walk grid, a taxi layer mirroring it, and PT corridors on selected rows/columns.

    Every location with more than one layer gets transfer edges in both
    directions between each pair of co-located vertices.
    """
    params = params or ScenarioParams()
    if rows < 1 or cols < 1:
        raise ScenarioError(f"grid needs rows, cols >= 1, got {rows}x{cols}")
    errs = params.check()
    if errs:
        raise ScenarioError("invalid scenario parameters", [Violation(e) for e in errs])
    rng = np.random.default_rng(seed)

    cells = [(r, c) for r in range(rows) for c in range(cols)]
    has_pt = {(r, c) for r, c in cells if r in params.pt_rows or c in params.pt_cols}
    vertices: list[Vertex] = []
    index: dict[tuple[Mode, int, int], int] = {}
    for mode in (Mode.WALK, Mode.TAXI, Mode.PT):
        for r, c in cells:
            if mode == Mode.PT and (r, c) not in has_pt:
                continue
            index[mode, r, c] = len(vertices)
            vertices.append(Vertex(len(vertices), mode, c * params.spacing_km, r * params.spacing_km))

    # adjacent pairs in a fixed order, one jittered length per physical link
    links = []
    for r, c in cells:
        if c + 1 < cols:
            links.append(((r, c), (r, c + 1)))
        if r + 1 < rows:
            links.append(((r, c), (r + 1, c)))
    jitter = rng.uniform(-params.length_jitter, params.length_jitter, size=len(links))
    lengths = params.spacing_km * (1.0 + jitter)

    tails, heads, kinds, labels = [], [], [], []

    def add(t: int, h: int, kind: EdgeKind, label: EdgeLabel) -> None:
        tails.append(t)
        heads.append(h)
        kinds.append(kind)
        labels.append(label)

    speeds = {Mode.WALK: params.walk_speed, Mode.TAXI: params.taxi_speed, Mode.PT: params.pt_speed}
    for mode in (Mode.WALK, Mode.TAXI, Mode.PT):
        for (a, b), length in zip(links, lengths):
            if mode == Mode.PT and not _on_corridor(a, b, params):
                continue
            lab = EdgeLabel(
                distance=float(length),
                freeflow_time=float(length / speeds[mode]),
                capacity=params.taxi_capacity if mode == Mode.TAXI else 0.0,
                bpr_a=params.bpr_a,
                bpr_b=params.bpr_b,
            )
            u, v = index[(mode, *a)], index[(mode, *b)]
            add(u, v, Service(mode), lab)
            add(v, u, Service(mode), lab)

    for r, c in cells:
        present = [m for m in (Mode.PT, Mode.TAXI, Mode.WALK) if (m, r, c) in index]
        for src in present:
            for dst in present:
                if src != dst:
                    add(index[src, r, c], index[dst, r, c], Transfer(src, dst),
                        EdgeLabel(bpr_a=params.bpr_a, bpr_b=params.bpr_b))

    graph = MultimodalGraph(vertices, tails, heads, kinds, labels)
    problems = validate(graph)
    if problems:
        raise ScenarioError("generated graph is invalid", problems)
    return graph


def _on_corridor(a: tuple[int, int], b: tuple[int, int], params: ScenarioParams) -> bool:
    if a[0] == b[0]:
        return a[0] in params.pt_rows
    return a[1] in params.pt_cols


def graph_to_dict(graph: MultimodalGraph, defaults: dict[str, Any] | None = None) -> dict[str, Any]:
    vertices = []
    for v in graph.vertices:
        rec: dict[str, Any] = {"id": v.id, "mode": MODE_NAMES[v.mode]}
        if v.x is not None:
            rec["x"] = v.x
        if v.y is not None:
            rec["y"] = v.y
        vertices.append(rec)
    edges = [
        {
            "id": e.id, "tail": e.tail, "head": e.head, "kind": str(e.kind),
            "c": e.label.price, "l": e.label.distance, "t_fc": e.label.fixed_time,
            "t0": e.label.freeflow_time, "V": e.label.capacity, "a": e.label.bpr_a, "b": e.label.bpr_b,
        }
        for e in graph.edges
    ]
    return {"vertices": vertices, "edges": edges, "defaults": dict(defaults or {"a": 0.15, "b": 4.0})}


def graph_from_dict(data: dict[str, Any]) -> MultimodalGraph:
    defaults = data.get("defaults", {})
    vertices = [
        Vertex(int(v["id"]), mode_from_name(v["mode"]), v.get("x"), v.get("y"))
        for v in sorted(data["vertices"], key=lambda v: int(v["id"]))
    ]
    edges = []
    for rec in data["edges"]:
        lab = EdgeLabel(
            price=float(rec.get("c", defaults.get("c", 0.0))),
            distance=float(rec.get("l", defaults.get("l", 0.0))),
            fixed_time=float(rec.get("t_fc", defaults.get("t_fc", 0.0))),
            freeflow_time=float(rec.get("t0", defaults.get("t0", 0.0))),
            capacity=float(rec.get("V", defaults.get("V", 0.0))),
            bpr_a=float(rec.get("a", defaults.get("a", 0.15))),
            bpr_b=float(rec.get("b", defaults.get("b", 4.0))),
        )
        edges.append(Edge(int(rec["id"]), int(rec["tail"]), int(rec["head"]), parse_kind(rec["kind"]), lab))
    return MultimodalGraph.from_edges(vertices, edges)


def dumps_graph(graph: MultimodalGraph) -> str:
    return json.dumps(graph_to_dict(graph), sort_keys=True, indent=1)


def loads_graph(text: str) -> MultimodalGraph:
    return graph_from_dict(json.loads(text))


def save_graph(graph: MultimodalGraph, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_graph(graph))
        fh.write("\n")


def load_graph(path) -> MultimodalGraph:
    with open(path) as fh:
        return loads_graph(fh.read())
