"""Multi-class user equilibrium by Frank-Wolfe on the Beckmann program.

Flows are kept both per edge and class (``class_flows``) and per request as a
map from path (tuple of edge ids) to flow. The path bookkeeping is what makes
conservation checkable and lets us test the Wardrop condition directly.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from itertools import count
from typing import Sequence

import numpy as np

from .demand import Demand, Request, UserClass
from .network import EdgeKind, EdgeLabel, Mode, MultimodalGraph, Service

INF = math.inf


class UnreachableError(RuntimeError):
    def __init__(self, index: int, request: Request):
        self.index = index
        self.request = request
        super().__init__(
            f"request {index} ({request.user_class.name} {request.origin}->{request.destination}) "
            "has no finite-cost path")


class PathCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class UESolverParams:
    epsilon: float = 1e-4
    max_iterations: int = 500
    line_search_tolerance: float = 1e-6
    # "pairwise" moves flow from each request's costliest used path to its
    # shortest path; "classic" blends towards the all-or-nothing load.
    method: str = "pairwise"

    def __post_init__(self):
        if self.method not in ("pairwise", "classic"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class FlowState:
    classes: tuple[UserClass, ...]
    class_flows: np.ndarray  # (n_classes, n_edges)
    path_flows: tuple[dict[tuple[int, ...], float], ...] = ()

    @property
    def total(self) -> np.ndarray:
        return self.class_flows.sum(axis=0)

    def class_flow(self, user_class: UserClass) -> np.ndarray:
        return self.class_flows[self.classes.index(user_class)]

    @property
    def vots(self) -> np.ndarray:
        return np.array([c.vot for c in self.classes])


@dataclass
class GapStats:
    tstc: float
    sptc: float
    rel_gap: float
    iterations: int
    converged: bool


@dataclass
class IterationRecord:
    iteration: int
    beckmann: float
    tstc: float
    sptc: float
    rel_gap: float
    alpha: float


def zero_flows(graph: MultimodalGraph, demand: Demand) -> FlowState:
    return FlowState(demand.classes, np.zeros((len(demand.classes), graph.n_edges)),
                     tuple({} for _ in demand))


def edge_travel_time(label: EdgeLabel, kind: EdgeKind, flow: float) -> float:
    """BPR time on taxi service edges, fixed plus free-flow time elsewhere."""
    if flow < 0:
        raise ValueError("flow must be non-negative")
    base = label.fixed_time + label.freeflow_time
    if kind != Service(Mode.TAXI):
        return base
    ratio = flow / label.capacity
    return base + label.freeflow_time * label.bpr_a * ratio ** label.bpr_b


def edge_travel_times(graph: MultimodalGraph, flows: np.ndarray) -> np.ndarray:
    t = graph.fixed_time + graph.freeflow_time
    cong = graph.congestible
    if cong.any():
        ratio = flows[cong] / graph.capacity[cong]
        t = t.copy()
        t[cong] += graph.freeflow_time[cong] * graph.bpr_a[cong] * ratio ** graph.bpr_b[cong]
    return t


def generalized_cost(label: EdgeLabel, time: float, user_class: UserClass) -> float:
    """Time-unit cost ``t + c / vot`` (hours)."""
    return time + label.price / user_class.vot


def _masked_product(flows: np.ndarray, values: np.ndarray) -> np.ndarray:
    # closed edges carry inf times; they never carry flow
    with np.errstate(invalid="ignore"):
        return np.where(flows != 0, flows * values, 0.0)


def beckmann_objective(graph: MultimodalGraph, flows: FlowState) -> float:
    y = flows.total
    base = graph.fixed_time + graph.freeflow_time
    integral = _masked_product(y, base)
    cong = graph.congestible
    if cong.any():
        a, b, t0, cap = graph.bpr_a[cong], graph.bpr_b[cong], graph.freeflow_time[cong], graph.capacity[cong]
        integral[cong] += t0 * a * cap * (y[cong] / cap) ** (b + 1) / (b + 1)
    money = float(((flows.class_flows / flows.vots[:, None]) @ graph.price).sum())
    return float(integral.sum() + money)


def total_system_cost(graph: MultimodalGraph, flows: FlowState, times: np.ndarray | None = None) -> float:
    """Sum over classes and edges of ``y^n (t + c / vot)`` in time units."""
    if times is None:
        times = edge_travel_times(graph, flows.total)
    total = 0.0
    for n, cls in enumerate(flows.classes):
        total += float(_masked_product(flows.class_flows[n], times + graph.price / cls.vot).sum())
    return total


def _shortest_tree(out_edges, head: list[int], cost: list[float], origin: int,
                   targets: set[int] | None = None):
    """Dijkstra from ``origin``; returns (distance, predecessor edge) maps.

    With ``targets`` the search stops once all of them are settled.

    Only a strictly shorter label replaces an existing one, so among equal-cost
    paths the one found first (lower vertex ids settled first, edges scanned in
    id order) wins, deterministically.
    """
    dist = {origin: 0.0}
    pred: dict[int, int] = {}
    heap = [(0.0, origin)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if targets is not None:
            targets.discard(u)
            if not targets:
                break
        for e in out_edges[u]:
            nd = d + cost[e]
            v = head[e]
            if nd < dist.get(v, INF):
                dist[v] = nd
                pred[v] = e
                heapq.heappush(heap, (nd, v))
    return dist, pred


def _all_or_nothing(graph: MultimodalGraph, times: np.ndarray, demand: Demand,
                    classes: Sequence[UserClass]):
    """Per-request shortest paths; returns (paths, costs, class_flows)."""
    head = graph.head.tolist()
    tail = graph.tail.tolist()
    out = graph.out_edges
    cls_index = {c: i for i, c in enumerate(classes)}
    groups: dict[tuple[int, int], list[int]] = {}
    for i, r in enumerate(demand):
        groups.setdefault((cls_index[r.user_class], r.origin), []).append(i)
    paths: list[tuple[int, ...]] = [()] * len(demand)
    costs = np.zeros(len(demand))
    class_flows = np.zeros((len(classes), graph.n_edges))
    for (n, origin), members in sorted(groups.items()):
        cost = (times + graph.price / classes[n].vot).tolist()
        dist, pred = _shortest_tree(out, head, cost, origin, {demand[i].destination for i in members})
        for i in members:
            r = demand[i]
            if r.destination not in dist:
                raise UnreachableError(i, r)
            path, v = [], r.destination
            while v != origin:
                e = pred[v]
                path.append(e)
                v = tail[e]
            path.reverse()
            paths[i] = tuple(path)
            costs[i] = dist[r.destination]
            if r.volume:
                class_flows[n, path] += r.volume
    return paths, costs, class_flows


def shortest_path_assignment(graph: MultimodalGraph, times: np.ndarray,
                             demand: Demand) -> tuple[FlowState, float]:
    """All-or-nothing load onto class-specific shortest paths, and the total shortest-path cost."""
    classes = demand.classes
    paths, costs, class_flows = _all_or_nothing(graph, np.asarray(times, dtype=float), demand, classes)
    path_flows = tuple({p: r.volume} for p, r in zip(paths, demand))
    sptc = float(sum(r.volume * c for r, c in zip(demand, costs)))
    return FlowState(classes, class_flows, path_flows), sptc


def _directional_derivative(graph, y, d, money, alpha):
    t = edge_travel_times(graph, y + alpha * d)
    return float(_masked_product(d, t).sum()) + money


def find_alpha(graph: MultimodalGraph, current: FlowState, target: FlowState,
               tolerance: float = 1e-6) -> float:
    """Exact line search on the segment from ``current`` to ``target``.

    The Beckmann objective is convex along the segment, so bisection on the
    sign of its derivative brackets the minimizer.
    """
    dn = target.class_flows - current.class_flows
    if not np.any(dn):
        return 0.0
    y, d = current.total, dn.sum(axis=0)
    money = float(((dn / current.vots[:, None]) @ graph.price).sum())
    if _directional_derivative(graph, y, d, money, 0.0) >= 0:
        return 0.0
    if _directional_derivative(graph, y, d, money, 1.0) <= 0:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if _directional_derivative(graph, y, d, money, mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _blend(current: FlowState, target: FlowState, alpha: float) -> FlowState:
    flows = (1 - alpha) * current.class_flows + alpha * target.class_flows
    np.maximum(flows, 0.0, out=flows)
    paths = []
    for cur, tgt in zip(current.path_flows, target.path_flows):
        new = {p: (1 - alpha) * f for p, f in cur.items()}
        for p, f in tgt.items():
            new[p] = new.get(p, 0.0) + alpha * f
        scale = sum(new.values())
        paths.append({p: f for p, f in new.items() if f > 1e-12 * scale})
    return FlowState(current.classes, flows, tuple(paths))


def _pairwise_target(graph: MultimodalGraph, current: FlowState, target: FlowState,
                     times: np.ndarray, demand: Demand) -> FlowState | None:
    """Far end of the pairwise segment, or None if every request already sits on its shortest path.

    For each request the flow on its costliest used path is shifted to the
    all-or-nothing path; all requests move the same share of their volume, and
    the segment ends where the first costliest path runs empty.
    """
    cls_index = {c: i for i, c in enumerate(current.classes)}
    moves = []
    for i, (cur, tgt, r) in enumerate(zip(current.path_flows, target.path_flows, demand)):
        (best,) = tgt
        cost = times + graph.price / r.user_class.vot
        worst = max(cur, key=lambda p: (float(cost[list(p)].sum()), p))
        if worst != best and cost[list(worst)].sum() > cost[list(best)].sum():
            moves.append((i, worst, best))
    if not moves:
        return None
    share = min(current.path_flows[i][worst] / demand[i].volume for i, worst, _ in moves)
    flows = current.class_flows.copy()
    paths = [dict(p) for p in current.path_flows]
    for i, worst, best in moves:
        r = demand[i]
        amount = share * r.volume
        n = cls_index[r.user_class]
        flows[n, list(worst)] -= amount
        flows[n, list(best)] += amount
        left = paths[i][worst] - amount
        if left <= 1e-12 * r.volume:
            del paths[i][worst]
        else:
            paths[i][worst] = left
        paths[i][best] = paths[i].get(best, 0.0) + amount
    np.maximum(flows, 0.0, out=flows)
    return FlowState(current.classes, flows, tuple(paths))


def _time_derivatives(graph: MultimodalGraph, flows: np.ndarray) -> np.ndarray:
    """Diagonal of the Beckmann Hessian: ``dt/dy`` (zero off the taxi layer)."""
    h = np.zeros(graph.n_edges)
    cong = graph.congestible
    if cong.any():
        a, b, t0, cap = graph.bpr_a[cong], graph.bpr_b[cong], graph.freeflow_time[cong], graph.capacity[cong]
        with np.errstate(divide="ignore", invalid="ignore"):
            d = t0 * a * b * np.power(flows[cong] / cap, b - 1.0) / cap
        h[cong] = np.where(np.isfinite(d), d, 0.0)
    return h


def _conjugate_target(graph: MultimodalGraph, current: FlowState, aon: FlowState,
                      previous: FlowState | None, max_weight: float = 0.99) -> FlowState:
    """Blend of the new all-or-nothing load and the previous search target.

    The weight makes the new direction conjugate to the previous one with
    respect to the Beckmann Hessian at ``current``; both ends are feasible, so
    the blend is too.
    """
    if previous is None:
        return aon
    x, s, prev = current.total, aon.total, previous.total
    h = _time_derivatives(graph, x)
    num = float(np.sum((prev - x) * h * (s - x)))
    den = float(np.sum((prev - x) * h * (s - prev)))
    if den == 0.0:
        return aon
    weight = num / den
    if weight > max_weight:
        weight = max_weight
    elif not weight >= 0.0:
        return aon
    return _blend(aon, previous, weight)


def _usable_warm_start(graph, demand, warm: FlowState | None) -> bool:
    if warm is None or warm.classes != demand.classes or len(warm.path_flows) != len(demand):
        return False
    if warm.class_flows.shape != (len(demand.classes), graph.n_edges):
        return False
    t = graph.fixed_time + graph.freeflow_time
    return bool(np.all(np.isfinite(t[warm.total > 0])))


def solve_ue(graph: MultimodalGraph, demand: Demand, params: UESolverParams | None = None,
             warm_start: FlowState | None = None,
             trace: list[IterationRecord] | None = None) -> tuple[FlowState, GapStats]:
    """Frank-Wolfe until the relative gap drops below ``params.epsilon``.

    Every iteration solves the all-or-nothing subproblem and does an exact line
    search. In the default pairwise variant the search direction takes flow off
    the costliest used path of each request instead of scaling all paths down,
    so paths that are not used at equilibrium empty out in finitely many steps.

    Non-convergence is reported through ``GapStats.converged``; the last
    iterate is returned either way.
    """
    params = params or UESolverParams()
    if demand.total == 0:
        return zero_flows(graph, demand), GapStats(0.0, 0.0, 0.0, 0, True)

    if _usable_warm_start(graph, demand, warm_start):
        current = warm_start
    else:
        current, _ = shortest_path_assignment(graph, edge_travel_times(graph, np.zeros(graph.n_edges)), demand)

    alpha = float("nan")
    previous: FlowState | None = None
    for it in count(1):
        times = edge_travel_times(graph, current.total)
        target, sptc = shortest_path_assignment(graph, times, demand)
        tstc = total_system_cost(graph, current, times)
        gap = tstc / sptc - 1.0 if sptc > 0 else 0.0
        if trace is not None:
            trace.append(IterationRecord(it, beckmann_objective(graph, current), tstc, sptc, gap, alpha))
        if gap < params.epsilon:
            return current, GapStats(tstc, sptc, gap, it, True)
        if it >= params.max_iterations:
            return current, GapStats(tstc, sptc, gap, it, False)
        search = target
        if params.method == "pairwise":
            search = _conjugate_target(graph, current, target, previous)
        candidates = [search]
        if params.method == "pairwise":
            swap = _pairwise_target(graph, current, target, times, demand)
            if swap is not None:
                candidates.append(swap)
        best = None
        for cand in candidates:
            a = find_alpha(graph, current, cand, params.line_search_tolerance)
            if a > 0.0:
                nxt = _blend(current, cand, a)
                val = beckmann_objective(graph, nxt)
                if best is None or val < best[0]:
                    best = (val, a, nxt, cand is search)
        if best is None:
            # line search cannot improve; further iterations would repeat this one
            return current, GapStats(tstc, sptc, gap, it, False)
        _, alpha, current, conjugate = best
        previous = search if conjugate else None
    raise AssertionError("unreachable")


def path_cost(graph: MultimodalGraph, times: np.ndarray, path: Sequence[int], user_class: UserClass) -> float:
    idx = list(path)
    return float(np.sum(times[idx] + graph.price[idx] / user_class.vot))


def wardrop_excess(graph: MultimodalGraph, demand: Demand, flows: FlowState,
                   threshold: float = 1e-6) -> np.ndarray:
    """Per request, the worst relative excess cost of a used path over the shortest path.

    A path counts as used when it carries more than ``threshold * volume``.
    """
    times = edge_travel_times(graph, flows.total)
    _, sp_costs, _ = _all_or_nothing(graph, times, demand, demand.classes)
    out = np.zeros(len(demand))
    for i, (r, pf) in enumerate(zip(demand, flows.path_flows)):
        worst = 0.0
        for p, f in pf.items():
            if f > threshold * r.volume:
                worst = max(worst, path_cost(graph, times, p, r.user_class) - sp_costs[i])
        out[i] = worst / sp_costs[i] if sp_costs[i] > 0 else worst
    return out


def write_trace_csv(trace: Sequence[IterationRecord], path, header: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["iteration", "beckmann", "tstc", "sptc", "rel_gap", "alpha"])
        for r in trace:
            w.writerow([r.iteration, float(r.beckmann), float(r.tstc), float(r.sptc), float(r.rel_gap), float(r.alpha)])


# ---------------------------------------------------------------------------
# brute-force oracle

@dataclass
class PathSet:
    paths: list[list[tuple[int, ...]]]  # per request
    incidence: list[np.ndarray] = field(default_factory=list)  # per request, (n_paths, n_edges)


def enumerate_paths(graph: MultimodalGraph, origin: int, destination: int, cap: int) -> list[tuple[int, ...]]:
    """Simple paths (no repeated vertex) over open edges, in DFS order by edge id."""
    open_edge = np.isfinite(graph.fixed_time + graph.freeflow_time).tolist()
    head = graph.head.tolist()
    out: list[tuple[int, ...]] = []
    stack: list[int] = []
    visited = {origin}

    def dfs(u: int) -> None:
        for e in graph.out_edges[u]:
            v = head[e]
            if not open_edge[e] or v in visited:
                continue
            stack.append(e)
            if v == destination:
                out.append(tuple(stack))
                if len(out) > cap:
                    raise PathCapExceeded(f"more than {cap} paths between {origin} and {destination}")
            else:
                visited.add(v)
                dfs(v)
                visited.discard(v)
            stack.pop()

    dfs(origin)
    return out


def build_path_set(graph: MultimodalGraph, demand: Demand, max_paths: int = 50) -> PathSet:
    paths, total = [], 0
    for r in demand:
        ps = enumerate_paths(graph, r.origin, r.destination, max_paths - total)
        total += len(ps)
        paths.append(ps)
    inc = []
    for ps in paths:
        m = np.zeros((len(ps), graph.n_edges))
        for j, p in enumerate(ps):
            m[j, list(p)] = 1.0
        inc.append(m)
    return PathSet(paths, inc)


def brute_force_ue(graph: MultimodalGraph, demand: Demand, resolution: float = 1e-3,
                   max_paths: int = 50, max_sweeps: int = 10_000) -> FlowState:
    """Reference equilibrium by pairwise exchange of path flows on a grid.

    Each request's volume is split into units of ``resolution * volume``; a
    sweep moves the Beckmann-optimal number of units between every ordered
    pair of paths. Stops when a sweep changes nothing.
    """
    pset = build_path_set(graph, demand, max_paths)
    classes = demand.classes
    cls_index = {c: i for i, c in enumerate(classes)}
    for i, (r, ps) in enumerate(zip(demand, pset.paths)):
        if r.volume > 0 and not ps:
            raise UnreachableError(i, r)
    units = [np.zeros(len(ps), dtype=np.int64) for ps in pset.paths]
    n_units = int(round(1.0 / resolution))
    for u in units:
        if len(u):
            u[0] = n_units
    steps = [r.volume / n_units for r in demand]

    def flows_of() -> np.ndarray:
        cf = np.zeros((len(classes), graph.n_edges))
        for r, u, m, h in zip(demand, units, pset.incidence, steps):
            if len(u):
                cf[cls_index[r.user_class]] += h * (u @ m)
        return cf

    base_state = FlowState(classes, flows_of())

    def objective(cf: np.ndarray) -> float:
        base_state.class_flows = cf
        return beckmann_objective(graph, base_state)

    cf = flows_of()
    for _ in range(max_sweeps):
        changed = False
        for r, u, m, h in zip(demand, units, pset.incidence, steps):
            n = cls_index[r.user_class]
            for a in range(len(u)):
                for b in range(len(u)):
                    if a == b or u[b] == 0:
                        continue
                    direction = h * (m[a] - m[b])

                    def phi(k: int) -> float:
                        trial = cf.copy()
                        trial[n] += k * direction
                        np.maximum(trial, 0.0, out=trial)
                        return objective(trial)

                    # smallest k in [0, u[b]] with phi(k+1) >= phi(k); phi is convex
                    lo, hi = 0, int(u[b])
                    while lo < hi:
                        mid = (lo + hi) // 2
                        if phi(mid + 1) >= phi(mid):
                            hi = mid
                        else:
                            lo = mid + 1
                    if lo > 0 and phi(lo) < phi(0):
                        u[a] += lo
                        u[b] -= lo
                        cf[n] += lo * direction
                        np.maximum(cf[n], 0.0, out=cf[n])
                        changed = True
        if not changed:
            break
    cf = flows_of()
    path_flows = tuple({p: float(k) * h for p, k in zip(ps, u) if k > 0}
                       for ps, u, h in zip(pset.paths, units, steps))
    return FlowState(classes, cf, path_flows)
