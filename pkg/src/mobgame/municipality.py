"""Municipal policy, its objective, and the top-level two-point optimizer."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .assignment import FlowState, edge_travel_times
from .network import Mode, MultimodalGraph, Service, Transfer
from .operators import PtStrategy, TxStrategy, pt_transfer_volume, revenue_pt, revenue_tx, tx_transfer_volume
from .zo import ZOParams, zo_step


@dataclass(frozen=True)
class Policy:
    tax_pt: float = 0.0
    tax_tx: float = 0.0
    license: float = 1000.0  # vehicles
    subsidy_pt: float = 0.0  # CHF per taxi->PT transfer
    subsidy_tx: float = 0.0  # CHF per PT->taxi transfer

    def as_array(self) -> np.ndarray:
        return np.fromiter(self.__dict__.values(), dtype=float, count=len(self.__dict__))

    @classmethod
    def from_array(cls, values) -> Policy:
        return cls(*(float(v) for v in values))


POLICY_FIELDS = tuple(f.name for f in fields(Policy))


@dataclass(frozen=True)
class PolicyBounds:
    lower: Policy = Policy(tax_pt=-1.0, tax_tx=0.0, license=0.0, subsidy_pt=0.0, subsidy_tx=0.0)
    upper: Policy = Policy(tax_pt=0.5, tax_tx=0.5, license=1000.0, subsidy_pt=20.0, subsidy_tx=20.0)

    def __post_init__(self):
        if np.any(self.upper.as_array() <= self.lower.as_array()):
            raise ValueError("policy bounds need lower < upper componentwise")

    @property
    def width(self) -> np.ndarray:
        return self.upper.as_array() - self.lower.as_array()

    def normalize(self, z: Policy) -> np.ndarray:
        return (z.as_array() - self.lower.as_array()) / self.width

    def denormalize(self, u) -> Policy:
        return Policy.from_array(self.lower.as_array() + np.asarray(u, dtype=float) * self.width)

    def contains(self, z: Policy, tol: float = 1e-12) -> bool:
        a = z.as_array()
        return bool(np.all(a >= self.lower.as_array() - tol) and np.all(a <= self.upper.as_array() + tol))


@dataclass(frozen=True)
class MunicipalParams:
    """Weights of ``J = -w1 J_sw + w2 J_em - w3 J_rev``.

    The formula is applied as written. Because ``J_sw`` is a travel *cost*, a
    positive ``w1`` rewards higher travel cost; pass a negative ``w1`` to make
    the municipality minimize travel cost instead.
    """

    emission_factor: float  # CHF per taxi-km
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not (np.isfinite(self.emission_factor) and self.emission_factor >= 0):
            raise ValueError("emission factor must be finite and >= 0")
        if len(self.weights) != 3 or not all(np.isfinite(self.weights)):
            raise ValueError("three finite weights required")


def social_welfare_cost(flows: FlowState, graph: MultimodalGraph) -> float:
    """Money-unit travel cost ``sum_n sum_e y_e^n (c_e + t_e vot_n)`` at congested times."""
    t = edge_travel_times(graph, flows.total)
    total = 0.0
    for n, cls in enumerate(flows.classes):
        y = flows.class_flows[n]
        used = y != 0
        total += float(np.sum(y[used] * (graph.price[used] + t[used] * cls.vot)))
    return total


def taxi_km(flows: FlowState, graph: MultimodalGraph) -> float:
    svc = graph.mask(Service(Mode.TAXI))
    return float(np.sum(flows.total[svc] * graph.distance[svc]))


def emissions(flows: FlowState, graph: MultimodalGraph, factor: float) -> float:
    return taxi_km(flows, graph) * factor


def municipal_revenue(z: Policy, revenues: Sequence[float], transfer_flows: Sequence[float]) -> float:
    """Taxes collected minus integration subsidies paid.

    ``revenues`` and ``transfer_flows`` are (PT, taxi) pairs; the PT transfer
    volume counts taxi->PT boardings and the taxi one PT->taxi boardings.
    """
    rev_pt, rev_tx = revenues
    tr_pt, tr_tx = transfer_flows
    return z.tax_pt * rev_pt + z.tax_tx * rev_tx - z.subsidy_pt * tr_pt - z.subsidy_tx * tr_tx


@dataclass(frozen=True)
class FlowSummary:
    """Flow aggregates sufficient to evaluate ``J`` without edge-level flows."""

    welfare_cost: float
    taxi_km: float
    revenue_pt: float
    revenue_tx: float
    transfers_pt: float
    transfers_tx: float
    pt_boardings: float
    taxi_boardings: float

    def as_array(self) -> np.ndarray:
        return np.fromiter(self.__dict__.values(), dtype=float, count=len(self.__dict__))

    @classmethod
    def from_array(cls, values) -> FlowSummary:
        return cls(*(float(v) for v in values))


SUMMARY_FIELDS = tuple(f.name for f in fields(FlowSummary))


def summarize(x_pt: PtStrategy, x_tx: TxStrategy, flows: FlowState, graph: MultimodalGraph) -> FlowSummary:
    y = flows.total
    boardings = {m: sum(float(y[graph.mask(Transfer(src, m))].sum()) for src in Mode if src != m)
                 for m in (Mode.PT, Mode.TAXI)}
    return FlowSummary(
        welfare_cost=social_welfare_cost(flows, graph),
        taxi_km=taxi_km(flows, graph),
        revenue_pt=revenue_pt(x_pt, flows, graph),
        revenue_tx=revenue_tx(x_tx, flows, graph),
        transfers_pt=pt_transfer_volume(flows, graph),
        transfers_tx=tx_transfer_volume(flows, graph),
        pt_boardings=boardings[Mode.PT],
        taxi_boardings=boardings[Mode.TAXI],
    )


@dataclass(frozen=True)
class JComponents:
    welfare: float
    emissions: float
    revenue: float
    total: float


def j_components(z: Policy, summary: FlowSummary, params: MunicipalParams) -> JComponents:
    w1, w2, w3 = params.weights
    sw = summary.welfare_cost
    em = summary.taxi_km * params.emission_factor
    rev = municipal_revenue(z, (summary.revenue_pt, summary.revenue_tx),
                            (summary.transfers_pt, summary.transfers_tx))
    return JComponents(sw, em, rev, -w1 * sw + w2 * em - w3 * rev)


def evaluate_J(z: Policy, strategies: tuple[PtStrategy, TxStrategy], flows: FlowState,
               graph: MultimodalGraph, params: MunicipalParams) -> float:
    x_pt, x_tx = strategies
    return j_components(z, summarize(x_pt, x_tx, flows, graph), params).total


def project_policy(z: Policy, bounds: PolicyBounds = PolicyBounds()) -> Policy:
    return Policy.from_array(np.clip(z.as_array(), bounds.lower.as_array(), bounds.upper.as_array()))


@dataclass
class PolicyStep:
    iteration: int
    z: Policy
    j_plus: float
    j_minus: float
    z_next: Policy
    j_best: float
    evaluations: int
    skipped: bool = False
    wallclock_ms: float | None = None


@dataclass
class OptimizationResult:
    method: str
    final: Policy
    best: Policy
    best_value: float
    evaluations: int
    trace: list[PolicyStep] = field(default_factory=list)
    evaluator: str = "exact"
    generation_best: list[float] = field(default_factory=list)


Evaluator = Callable[[Policy], float]


def optimize_policy(evaluator: Evaluator, z0: Policy, params: ZOParams,
                    bounds: PolicyBounds = PolicyBounds(), budget: int | None = None,
                    evaluator_name: str = "exact", timing: bool = False,
                    objective_scale: float = 1.0) -> OptimizationResult:
    """Projected two-point descent on ``J`` over the policy box.

    Works in box-normalized coordinates so that one unit of exploration means
    the same relative move for taxes, the license cap and subsidies. Runs
    ``params.iterations`` steps (or fewer if ``budget`` evaluations run out);
    each step costs two evaluations. The best probe seen is reported.
    The step sees ``J / objective_scale``; traces record ``J`` itself.
    """
    if not objective_scale > 0:
        raise ValueError("objective_scale must be positive")
    if not bounds.contains(z0):
        raise ValueError(f"initial policy {z0} outside the policy box")
    rng = np.random.default_rng(params.seed)
    u = bounds.normalize(z0)
    clip = lambda w: np.clip(w, 0.0, 1.0)  # noqa: E731
    probes: list[tuple[np.ndarray, float]] = []

    def objective(w: np.ndarray) -> float:
        val = float(evaluator(bounds.denormalize(w)))
        probes.append((w, val))
        return val / objective_scale

    steps = params.iterations
    if budget is not None:
        steps = min(steps, budget // 2)
    best_u, best_val, n_eval = u.copy(), np.inf, 0
    trace: list[PolicyStep] = []
    start = time.perf_counter()
    for it in range(steps):
        probes.clear()
        step = zo_step(u, objective, params, clip, rng)
        n_eval += 2 if not step.failed else len(probes) + 1
        for w, val in probes:
            if val < best_val:
                best_val, best_u = val, w.copy()
        trace.append(PolicyStep(
            it, bounds.denormalize(u), step.f_plus * objective_scale, step.f_minus * objective_scale,
            bounds.denormalize(step.x_next),
            best_val, n_eval, step.failed,
            (time.perf_counter() - start) * 1e3 if timing else None,
        ))
        u = step.x_next
    return OptimizationResult("feedback", bounds.denormalize(u), bounds.denormalize(best_u), best_val,
                              n_eval, trace, evaluator_name)


TRACE_COLUMNS = ("method", "iteration", "evaluations") + tuple(f"z_{n}" for n in POLICY_FIELDS) + (
    "J_plus", "J_minus", "J_best", "evaluator", "wallclock_ms")


def write_policy_trace(result: OptimizationResult, path, header: Sequence[str] = ()) -> None:
    """Trace CSV shared by the feedback optimizer and the baselines."""
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for s in result.trace:
            w.writerow([result.method, s.iteration, s.evaluations, *(float(v) for v in s.z.as_array()),
                        float(s.j_plus), float(s.j_minus), float(s.j_best), result.evaluator,
                        "" if s.wallclock_ms is None else f"{s.wallclock_ms:.3f}"])
