"""PT and taxi operator strategies, pricing onto the network, and operator objectives."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import TYPE_CHECKING

import numpy as np

from .assignment import FlowState, edge_travel_times
from .network import Mode, MultimodalGraph, Service, Transfer

if TYPE_CHECKING:
    from .municipality import Policy


# Defaults sit at half the fare caps, i.e. current price levels.
@dataclass(frozen=True)
class PtStrategy:
    frequency: float = 6.0  # vehicles/h
    base_fare: float = 4.6  # CHF
    distance_fare: float = 2.5  # CHF/km
    transfer_fare: float = 4.6  # CHF

    def as_array(self) -> np.ndarray:
        return np.fromiter(self.__dict__.values(), dtype=float, count=len(self.__dict__))

    @classmethod
    def from_array(cls, values) -> PtStrategy:
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class TxStrategy:
    fleet: float = 50.0  # vehicles
    base_fare: float = 6.0  # CHF
    distance_fare: float = 3.8  # CHF/km
    time_fare: float = 69.0  # CHF/h
    transfer_fare: float = 6.0  # CHF

    def as_array(self) -> np.ndarray:
        return np.fromiter(self.__dict__.values(), dtype=float, count=len(self.__dict__))

    @classmethod
    def from_array(cls, values) -> TxStrategy:
        return cls(*(float(v) for v in values))


PT_FIELDS = tuple(f.name for f in fields(PtStrategy))
TX_FIELDS = tuple(f.name for f in fields(TxStrategy))


@dataclass(frozen=True)
class StrategyBounds:
    """Upper bounds on operator decisions. The fleet bound is the license cap at
    run time; ``pt.frequency`` is q_max."""

    pt: PtStrategy = PtStrategy(frequency=16.0, base_fare=9.2, distance_fare=5.0, transfer_fare=20.0)
    tx: TxStrategy = TxStrategy(fleet=1000.0, base_fare=12.0, distance_fare=7.6, time_fare=138.0,
                                transfer_fare=20.0)

    def __post_init__(self):
        if np.any(self.pt.as_array() <= 0) or np.any(self.tx.as_array() <= 0):
            raise ValueError("strategy bounds must be strictly positive")


@dataclass(frozen=True)
class OperatorCostParams:
    distance_cost: float  # CHF/km
    time_cost: float  # CHF/h
    vehicle_cost: float  # CHF/vehicle/h


PT_COSTS = OperatorCostParams(distance_cost=1.3, time_cost=26.0, vehicle_cost=115.0)
TX_COSTS = OperatorCostParams(distance_cost=0.12, time_cost=24.0, vehicle_cost=9.0)


@dataclass(frozen=True)
class AccessModelParams:
    """Taxi access wait is ``kappa / fleet`` hours."""

    kappa: float = 2.0


def apply_strategies(template: MultimodalGraph, x_pt: PtStrategy, x_tx: TxStrategy,
                     access: AccessModelParams = AccessModelParams()) -> MultimodalGraph:
    """Write fares and waiting times implied by the strategies onto a copy of ``template``."""
    m = template.mask
    price = np.zeros(template.n_edges)
    fixed = np.array(template.fixed_time, dtype=float)
    pt_wait = 1.0 / (2.0 * x_pt.frequency) if x_pt.frequency > 0 else np.inf
    tx_wait = access.kappa / x_tx.fleet if x_tx.fleet > 0 else np.inf
    dist, t0 = template.distance, template.freeflow_time

    pt = m(Service(Mode.PT))
    price[pt] = dist[pt] * x_pt.distance_fare
    tx = m(Service(Mode.TAXI))
    price[tx] = dist[tx] * x_tx.distance_fare + t0[tx] * x_tx.time_fare
    for src, fare in ((Mode.WALK, x_pt.base_fare), (Mode.TAXI, x_pt.transfer_fare)):
        sel = m(Transfer(src, Mode.PT))
        price[sel] = fare
        fixed[sel] = pt_wait
    for src, fare in ((Mode.WALK, x_tx.base_fare), (Mode.PT, x_tx.transfer_fare)):
        sel = m(Transfer(src, Mode.TAXI))
        price[sel] = fare
        fixed[sel] = tx_wait
    for src in (Mode.PT, Mode.TAXI):
        fixed[m(Transfer(src, Mode.WALK))] = 0.0
    return template.with_labels(price=price, fixed_time=fixed)


def _sum_on(flows: np.ndarray, mask: np.ndarray) -> float:
    return float(flows[mask].sum())


def pt_transfer_volume(flows: FlowState, graph: MultimodalGraph) -> float:
    """Boardings from taxi into PT, the base of the PT integration subsidy."""
    return _sum_on(flows.total, graph.mask(Transfer(Mode.TAXI, Mode.PT)))


def tx_transfer_volume(flows: FlowState, graph: MultimodalGraph) -> float:
    """Boardings from PT into taxi, the base of the taxi integration subsidy."""
    return _sum_on(flows.total, graph.mask(Transfer(Mode.PT, Mode.TAXI)))


def revenue_pt(x_pt: PtStrategy, flows: FlowState, graph: MultimodalGraph) -> float:
    y = flows.total
    svc = graph.mask(Service(Mode.PT))
    return (float(np.sum(y[svc] * graph.distance[svc])) * x_pt.distance_fare
            + _sum_on(y, graph.mask(Transfer(Mode.WALK, Mode.PT))) * x_pt.base_fare
            + _sum_on(y, graph.mask(Transfer(Mode.TAXI, Mode.PT))) * x_pt.transfer_fare)


def revenue_tx(x_tx: TxStrategy, flows: FlowState, graph: MultimodalGraph) -> float:
    """Taxi fares collected; the time fare applies to congested times at ``flows``."""
    y = flows.total
    svc = graph.mask(Service(Mode.TAXI))
    t = edge_travel_times(graph, y)
    return (float(np.sum(y[svc] * (graph.distance[svc] * x_tx.distance_fare + t[svc] * x_tx.time_fare)))
            + _sum_on(y, graph.mask(Transfer(Mode.WALK, Mode.TAXI))) * x_tx.base_fare
            + _sum_on(y, graph.mask(Transfer(Mode.PT, Mode.TAXI))) * x_tx.transfer_fare)


def cost_pt(x_pt: PtStrategy, graph: MultimodalGraph, costs: OperatorCostParams = PT_COSTS) -> float:
    svc = graph.mask(Service(Mode.PT))
    scheduled = graph.fixed_time[svc] + graph.freeflow_time[svc]
    per_run = float(np.sum(graph.distance[svc] * costs.distance_cost + scheduled * costs.time_cost))
    return x_pt.frequency * per_run + costs.vehicle_cost * x_pt.frequency


def cost_tx(x_tx: TxStrategy, flows: FlowState, graph: MultimodalGraph,
            costs: OperatorCostParams = TX_COSTS) -> float:
    y = flows.total
    svc = graph.mask(Service(Mode.TAXI))
    t = edge_travel_times(graph, y)
    return (float(np.sum(y[svc] * (graph.distance[svc] * costs.distance_cost + t[svc] * costs.time_cost)))
            + costs.vehicle_cost * x_tx.fleet)


def operator_objective(tax: float, revenue: float, cost: float, subsidy: float, transfers: float) -> float:
    """Post-tax loss: ``(tax - 1) * revenue + cost - subsidy * transfers``."""
    return (tax - 1.0) * revenue + cost - subsidy * transfers


def objective_pt(x_pt: PtStrategy, flows: FlowState, graph: MultimodalGraph, z: Policy,
                 costs: OperatorCostParams = PT_COSTS) -> float:
    return operator_objective(z.tax_pt, revenue_pt(x_pt, flows, graph), cost_pt(x_pt, graph, costs),
                              z.subsidy_pt, pt_transfer_volume(flows, graph))


def objective_tx(x_tx: TxStrategy, flows: FlowState, graph: MultimodalGraph, z: Policy,
                 costs: OperatorCostParams = TX_COSTS) -> float:
    return operator_objective(z.tax_tx, revenue_tx(x_tx, flows, graph), cost_tx(x_tx, flows, graph, costs),
                              z.subsidy_tx, tx_transfer_volume(flows, graph))


def project_pt(x: PtStrategy, bounds: StrategyBounds = StrategyBounds()) -> PtStrategy:
    v = np.clip(x.as_array(), 0.0, bounds.pt.as_array())
    out = PtStrategy.from_array(v)
    return replace(out, transfer_fare=min(out.transfer_fare, out.base_fare))


def project_tx(x: TxStrategy, bounds: StrategyBounds = StrategyBounds(), license_cap: float | None = None) -> TxStrategy:
    upper = bounds.tx.as_array()
    if license_cap is not None:
        upper[0] = min(upper[0], max(license_cap, 0.0))
    out = TxStrategy.from_array(np.clip(x.as_array(), 0.0, upper))
    return replace(out, transfer_fare=min(out.transfer_fare, out.base_fare))


def strategy_violations(x_pt: PtStrategy, x_tx: TxStrategy, bounds: StrategyBounds,
                        license_cap: float | None = None, tol: float = 1e-12) -> list[str]:
    out = []
    for name, x, ub in (("pt", x_pt.as_array(), bounds.pt.as_array()), ("tx", x_tx.as_array(), bounds.tx.as_array())):
        if np.any(x < -tol) or np.any(x > ub + tol):
            out.append(f"{name} strategy {x.tolist()} outside [0, {ub.tolist()}]")
    if x_pt.transfer_fare > x_pt.base_fare + tol:
        out.append("pt transfer fare exceeds base fare")
    if x_tx.transfer_fare > x_tx.base_fare + tol:
        out.append("tx transfer fare exceeds base fare")
    if license_cap is not None and x_tx.fleet > license_cap + tol:
        out.append(f"fleet {x_tx.fleet} exceeds license cap {license_cap}")
    return out
