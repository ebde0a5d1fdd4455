"""Trip requests from heterogeneous traveler classes."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .network import Mode, MultimodalGraph, ScenarioError, Violation


@dataclass(frozen=True)
class UserClass:
    name: str
    vot: float  # CHF/h

    def __post_init__(self):
        if not self.vot > 0:
            raise ValueError(f"value of time must be positive, got {self.vot}")


COMMUTING = UserClass("Commuting", 19.0)
BUSINESS = UserClass("Business", 32.0)
LEISURE = UserClass("Leisure", 12.0)
DEFAULT_CLASSES = (COMMUTING, BUSINESS, LEISURE)
DEFAULT_CLASS_MIX = (0.5, 0.2, 0.3)


@dataclass(frozen=True)
class Request:
    user_class: UserClass
    origin: int
    destination: int
    volume: float  # travelers/h


class Demand:
    """Pre-aggregated requests, at most one per (class, origin, destination)."""

    def __init__(self, requests: Iterable[Request] = ()):
        self.requests = tuple(requests)
        seen = set()
        for r in self.requests:
            key = (r.user_class, r.origin, r.destination)
            if key in seen:
                raise ValueError(f"duplicate request {r.user_class.name} {r.origin}->{r.destination}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.requests)

    def __iter__(self):
        return iter(self.requests)

    def __getitem__(self, i: int) -> Request:
        return self.requests[i]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Demand) and self.requests == other.requests

    def __repr__(self) -> str:
        return f"Demand({len(self)} requests, total={self.total:g}/h)"

    @property
    def total(self) -> float:
        return float(sum(r.volume for r in self.requests))

    @property
    def classes(self) -> tuple[UserClass, ...]:
        """Distinct classes, default classes first in canonical order."""
        present = {r.user_class for r in self.requests}
        ordered = [c for c in DEFAULT_CLASSES if c in present]
        extra = sorted(present - set(DEFAULT_CLASSES), key=lambda c: (c.name, c.vot))
        return tuple(ordered + extra)

    def scaled(self, factor: float) -> Demand:
        return Demand(Request(r.user_class, r.origin, r.destination, r.volume * factor)
                      for r in self.requests)


def generate_demand(graph: MultimodalGraph, n_requests: int,
                    class_mix: Sequence[float] = DEFAULT_CLASS_MIX, seed: int = 0,
                    volume_range: tuple[float, float] = (5.0, 30.0),
                    classes: Sequence[UserClass] = DEFAULT_CLASSES) -> Demand:
    """Random requests between distinct walk vertices; deterministic per seed."""
    mix = np.asarray(class_mix, dtype=float)
    if mix.shape != (len(classes),) or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-9:
        raise ValueError(f"class_mix must be a probability vector over {len(classes)} classes")
    walk = graph.vertices_in(Mode.WALK)
    if len(walk) < 2:
        raise ScenarioError(f"demand needs at least 2 walk vertices, graph has {len(walk)}")
    lo, hi = volume_range
    if not 0 < lo <= hi:
        raise ValueError("volume_range must satisfy 0 < lo <= hi")
    capacity = len(classes) * len(walk) * (len(walk) - 1)
    if n_requests > capacity:
        raise ValueError(f"cannot draw {n_requests} distinct requests, only {capacity} exist")
    rng = np.random.default_rng(seed)
    seen: set[tuple[int, int, int]] = set()
    requests = []
    while len(requests) < n_requests:
        k = int(rng.choice(len(classes), p=mix))
        o, d = (int(walk[i]) for i in rng.choice(len(walk), size=2, replace=False))
        vol = float(rng.uniform(lo, hi))
        if (k, o, d) in seen:
            continue
        seen.add((k, o, d))
        requests.append(Request(classes[k], o, d, vol))
    return Demand(requests)


def validate_demand(demand: Demand, graph: MultimodalGraph) -> list[Violation]:
    out = []
    modes = graph.vertex_mode
    for i, r in enumerate(demand):
        tag = f"request {i} ({r.user_class.name} {r.origin}->{r.destination})"
        for end, v in (("origin", r.origin), ("destination", r.destination)):
            if not 0 <= v < graph.n_vertices:
                out.append(Violation(f"{tag}: {end} {v} is not a vertex"))
            elif modes[v] != Mode.WALK:
                out.append(Violation(f"{tag}: {end} {v} is in the {Mode(modes[v]).name} layer, not WALK"))
        if r.origin == r.destination:
            out.append(Violation(f"{tag}: origin equals destination"))
        if not (np.isfinite(r.volume) and r.volume >= 0):
            out.append(Violation(f"{tag}: volume {r.volume} must be >= 0"))
    reach: dict[int, set[int]] = {}
    for i, r in enumerate(demand):
        ends_ok = all(0 <= v < graph.n_vertices and modes[v] == Mode.WALK for v in (r.origin, r.destination))
        if not ends_ok or r.origin == r.destination:
            continue
        if r.origin not in reach:
            reach[r.origin] = _reachable(graph, r.origin)
        if r.destination not in reach[r.origin]:
            out.append(Violation(f"request {i} ({r.user_class.name} {r.origin}->{r.destination}): "
                                 "destination unreachable from origin"))
    return out


def _reachable(graph: MultimodalGraph, origin: int) -> set[int]:
    """Vertices reachable from ``origin`` over edges with finite time."""
    open_edge = np.isfinite(graph.fixed_time + graph.freeflow_time)
    seen, stack = {origin}, [origin]
    while stack:
        u = stack.pop()
        for e in graph.out_edges[u]:
            v = int(graph.head[e])
            if open_edge[e] and v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def _class_by_name(name: str, classes: Sequence[UserClass]) -> UserClass:
    for c in classes:
        if c.name.lower() == name.lower():
            return c
    raise ValueError(f"unknown user class {name!r}")


def demand_to_records(demand: Demand) -> list[dict]:
    return [{"class": r.user_class.name, "origin": r.origin, "destination": r.destination,
             "volume": r.volume} for r in demand]


def demand_from_records(records: Iterable[dict], classes: Sequence[UserClass] = DEFAULT_CLASSES) -> Demand:
    return Demand(
        Request(_class_by_name(rec["class"], classes), int(rec["origin"]), int(rec["destination"]),
                float(rec["volume"]))
        for rec in records
    )


def save_demand(demand: Demand, path) -> None:
    with open(path, "w") as fh:
        json.dump(demand_to_records(demand), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_demand(path, classes: Sequence[UserClass] = DEFAULT_CLASSES) -> Demand:
    path = str(path)
    if path.endswith(".csv"):
        with open(path, newline="") as fh:
            return demand_from_records(csv.DictReader(fh), classes)
    with open(path) as fh:
        return demand_from_records(json.load(fh), classes)
