"""Scenario documents: everything a run needs, in one JSON file.

A scenario holds the network (inline, or generator parameters), the demand,
operator and policy settings, and solver parameters. Loading validates the
whole document and reports every problem at once. Bundled scenarios live in
``mobgame/data`` and can be referred to by name (``pigou``, ``grid``).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

from .assignment import UESolverParams
from .baselines import GAParams
from .demand import DEFAULT_CLASSES, Demand, UserClass, demand_from_records, generate_demand, validate_demand
from .equilibrium import MobilityGame, TrainParams
from .municipality import MunicipalParams, Policy, PolicyBounds
from .network import (
    MultimodalGraph, ScenarioError, ScenarioParams, Violation, build_grid_scenario, graph_from_dict, validate,
)
from .operators import (
    PT_COSTS, TX_COSTS, AccessModelParams, OperatorCostParams, PtStrategy, StrategyBounds, TxStrategy,
    strategy_violations,
)
from .zo import ZOParams

BUNDLED = ("pigou", "grid")


@dataclass(frozen=True)
class OperatorSetup:
    bounds: StrategyBounds = field(default_factory=StrategyBounds)
    pt_costs: OperatorCostParams = PT_COSTS
    tx_costs: OperatorCostParams = TX_COSTS
    access: AccessModelParams = field(default_factory=AccessModelParams)
    initial: tuple[PtStrategy, TxStrategy] = (PtStrategy(), TxStrategy())


@dataclass(frozen=True)
class PolicySetup:
    municipal: MunicipalParams
    bounds: PolicyBounds = field(default_factory=PolicyBounds)
    initial: Policy = Policy()


@dataclass(frozen=True)
class SolverSetup:
    ue: UESolverParams = field(default_factory=UESolverParams)
    # operator play; the exact policy evaluator runs this from the initial strategies
    mne: ZOParams = field(default_factory=ZOParams)
    mne_objective_scale: float = 100.0
    fleet_scale: float = 100.0
    policy: ZOParams = field(default_factory=ZOParams)
    policy_objective_scale: float = 1.0
    ga: GAParams = field(default_factory=GAParams)
    budget: int = 600
    dataset_samples: int = 200
    hidden: int = 32
    train: TrainParams = field(default_factory=TrainParams)


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    graph: MultimodalGraph
    demand: Demand
    classes: tuple[UserClass, ...]
    operators: OperatorSetup | None
    policy: PolicySetup | None
    solvers: SolverSetup
    digest: str  # sha256 of the canonical document

    def game(self, **overrides) -> MobilityGame:
        ops = self.require_operators()
        kw = dict(
            template=self.graph, demand=self.demand, bounds=ops.bounds, pt_costs=ops.pt_costs,
            tx_costs=ops.tx_costs, access=ops.access, ue_params=self.solvers.ue,
            objective_scale=self.solvers.mne_objective_scale, fleet_scale=self.solvers.fleet_scale,
        )
        kw.update(overrides)
        return MobilityGame(**kw)

    def require_operators(self) -> OperatorSetup:
        if self.operators is None:
            raise ScenarioError(f"scenario {self.name!r} has no operators section")
        return self.operators

    def require_policy(self) -> PolicySetup:
        if self.policy is None:
            raise ScenarioError(f"scenario {self.name!r} has no policy section")
        return self.policy


# ---------------------------------------------------------------------------
# reading


class _Reader:
    """Builds dataclasses from dict sections, collecting problems instead of raising."""

    def __init__(self):
        self.problems: list[Violation] = []

    def fail(self, where: str, message: str) -> None:
        self.problems.append(Violation(f"{where}: {message}"))

    def section(self, data: Any, where: str, allowed: set[str]) -> dict:
        if data is None:
            return {}
        if not isinstance(data, dict):
            self.fail(where, "expected an object")
            return {}
        for key in sorted(set(data) - allowed):
            self.fail(where, f"unknown key {key!r}")
        return data

    def build(self, cls, data: Any, where: str, base=None):
        """``cls`` from ``data`` keyed by field names, over ``base`` (or the defaults)."""
        names = {f.name for f in fields(cls)}
        data = self.section(data, where, names)
        try:
            if base is not None:
                return replace(base, **data)
            return cls(**data)
        except (TypeError, ValueError) as exc:
            self.fail(where, str(exc))
            return base if base is not None else None


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def scenario_digest(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def _network(doc: Any, rd: _Reader) -> MultimodalGraph | None:
    net = rd.section(doc, "network", {"graph", "grid"})
    if ("graph" in net) == ("grid" in net):
        rd.fail("network", "give exactly one of 'graph' or 'grid'")
        return None
    try:
        if "graph" in net:
            return graph_from_dict(net["graph"])
        grid = rd.section(net["grid"], "network.grid", {"rows", "cols", "seed", "params"})
        params = ScenarioParams.from_dict(grid.get("params", {}))
        return build_grid_scenario(int(grid["rows"]), int(grid["cols"]), params, int(grid.get("seed", 0)))
    except ScenarioError as exc:
        rd.fail("network", str(exc))
        rd.problems.extend(exc.violations)
    except (KeyError, TypeError, ValueError) as exc:
        rd.fail("network", f"malformed: {exc!r}")
    return None


def _demand(doc: Any, graph: MultimodalGraph, classes, rd: _Reader) -> Demand | None:
    dem = rd.section(doc, "demand", {"requests", "generate"})
    if ("requests" in dem) == ("generate" in dem):
        rd.fail("demand", "give exactly one of 'requests' or 'generate'")
        return None
    try:
        if "requests" in dem:
            return demand_from_records(dem["requests"], classes)
        gen = rd.section(dem["generate"], "demand.generate", {"n", "class_mix", "seed", "volume_range"})
        kw = {}
        if "class_mix" in gen:
            kw["class_mix"] = tuple(gen["class_mix"])
        if "volume_range" in gen:
            kw["volume_range"] = tuple(gen["volume_range"])
        return generate_demand(graph, int(gen["n"]), seed=int(gen.get("seed", 0)), classes=classes, **kw)
    except (KeyError, TypeError, ValueError, ScenarioError) as exc:
        rd.fail("demand", f"malformed: {exc}")
    return None


def _operators(doc: Any, rd: _Reader) -> OperatorSetup | None:
    if doc is None:
        return None
    ops = rd.section(doc, "operators", {"bounds", "costs", "initial", "kappa"})
    bnd = rd.section(ops.get("bounds"), "operators.bounds", {"pt", "tx"})
    default = StrategyBounds()
    pt_ub = rd.build(PtStrategy, bnd.get("pt"), "operators.bounds.pt", default.pt)
    tx_ub = rd.build(TxStrategy, bnd.get("tx"), "operators.bounds.tx", default.tx)
    try:
        bounds = StrategyBounds(pt_ub, tx_ub)
    except ValueError as exc:
        rd.fail("operators.bounds", str(exc))
        bounds = default
    costs = rd.section(ops.get("costs"), "operators.costs", {"pt", "tx"})
    init = rd.section(ops.get("initial"), "operators.initial", {"pt", "tx"})
    try:
        access = AccessModelParams(float(ops.get("kappa", AccessModelParams().kappa)))
    except (TypeError, ValueError) as exc:
        rd.fail("operators.kappa", str(exc))
        access = AccessModelParams()
    return OperatorSetup(
        bounds=bounds,
        pt_costs=rd.build(OperatorCostParams, costs.get("pt"), "operators.costs.pt", PT_COSTS),
        tx_costs=rd.build(OperatorCostParams, costs.get("tx"), "operators.costs.tx", TX_COSTS),
        access=access,
        initial=(rd.build(PtStrategy, init.get("pt"), "operators.initial.pt", PtStrategy()),
                 rd.build(TxStrategy, init.get("tx"), "operators.initial.tx", TxStrategy())),
    )


def _policy(doc: Any, rd: _Reader) -> PolicySetup | None:
    if doc is None:
        return None
    pol = rd.section(doc, "policy", {"initial", "lower", "upper", "weights", "emission_factor"})
    default = PolicyBounds()
    lower = rd.build(Policy, pol.get("lower"), "policy.lower", default.lower)
    upper = rd.build(Policy, pol.get("upper"), "policy.upper", default.upper)
    try:
        bounds = PolicyBounds(lower, upper)
    except ValueError as exc:
        rd.fail("policy", str(exc))
        bounds = default
    if "emission_factor" not in pol:
        rd.fail("policy", "emission_factor is required (CHF per taxi-km)")
        return None
    try:
        municipal = MunicipalParams(float(pol["emission_factor"]),
                                    tuple(float(w) for w in pol.get("weights", (1.0, 1.0, 1.0))))
    except (TypeError, ValueError) as exc:
        rd.fail("policy", str(exc))
        return None
    initial = rd.build(Policy, pol.get("initial"), "policy.initial", Policy())
    return PolicySetup(municipal, bounds, initial)


_SOLVER_KEYS = {"ue", "mne", "mne_objective_scale", "fleet_scale", "policy", "policy_objective_scale", "ga",
                "budget", "dataset_samples", "hidden", "train"}


def _solvers(doc: Any, rd: _Reader) -> SolverSetup:
    sv = rd.section(doc, "solvers", _SOLVER_KEYS)
    base = SolverSetup()
    kw: dict[str, Any] = {}
    for key, cls in (("ue", UESolverParams), ("mne", ZOParams), ("policy", ZOParams), ("ga", GAParams),
                     ("train", TrainParams)):
        if key in sv:
            kw[key] = rd.build(cls, sv[key], f"solvers.{key}", getattr(base, key))
    for key in ("mne_objective_scale", "fleet_scale", "policy_objective_scale"):
        if key in sv:
            val = sv[key]
            if not (isinstance(val, (int, float)) and val > 0):
                rd.fail(f"solvers.{key}", f"must be a positive number, got {val!r}")
            else:
                kw[key] = float(val)
    for key in ("budget", "dataset_samples", "hidden"):
        if key in sv:
            val = sv[key]
            if not (isinstance(val, int) and val >= 1):
                rd.fail(f"solvers.{key}", f"must be a positive integer, got {val!r}")
            else:
                kw[key] = val
    return replace(base, **kw)


def _classes(doc: Any, rd: _Reader) -> tuple[UserClass, ...]:
    if doc is None:
        return DEFAULT_CLASSES
    try:
        return tuple(UserClass(str(c["name"]), float(c["vot"])) for c in doc)
    except (KeyError, TypeError, ValueError) as exc:
        rd.fail("classes", f"malformed: {exc!r}")
        return DEFAULT_CLASSES


def scenario_from_dict(doc: dict, default_name: str = "scenario") -> Scenario:
    """Parse and validate a scenario document; raises ``ScenarioError`` listing every problem."""
    rd = _Reader()
    doc = rd.section(doc, "scenario",
                     {"name", "seed", "network", "demand", "classes", "operators", "policy", "solvers"})
    classes = _classes(doc.get("classes"), rd)
    graph = _network(doc.get("network"), rd)
    demand = _demand(doc.get("demand"), graph, classes, rd) if graph is not None else None
    operators = _operators(doc.get("operators"), rd)
    policy = _policy(doc.get("policy"), rd)
    solvers = _solvers(doc.get("solvers"), rd)
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        rd.fail("seed", f"must be a non-negative integer, got {seed!r}")

    if graph is not None:
        rd.problems.extend(validate(graph))
        if demand is not None:
            rd.problems.extend(validate_demand(demand, graph))
    if operators is not None:
        x_pt, x_tx = operators.initial
        cap = policy.initial.license if policy is not None else None
        for msg in strategy_violations(x_pt, x_tx, operators.bounds, cap):
            rd.fail("operators.initial", msg)
    if policy is not None and not policy.bounds.contains(policy.initial):
        rd.fail("policy.initial", f"{policy.initial} lies outside the policy box")

    if rd.problems:
        raise ScenarioError(f"invalid scenario ({len(rd.problems)} problems)", rd.problems)
    return Scenario(str(doc.get("name", default_name)), seed, graph, demand, classes, operators, policy,
                    solvers, scenario_digest(doc))


def bundled_path(name: str) -> Path:
    if name not in BUNDLED:
        raise ValueError(f"no bundled scenario {name!r}; choose from {BUNDLED}")
    return Path(str(resources.files("mobgame") / "data" / f"{name}.json"))


def resolve_path(spec: str | Path) -> Path:
    """A file path, or the name of a bundled scenario."""
    path = Path(spec)
    if not path.exists() and str(spec) in BUNDLED:
        return bundled_path(str(spec))
    return path


def load_scenario(spec: str | Path) -> Scenario:
    path = resolve_path(spec)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(doc, default_name=path.stem)
