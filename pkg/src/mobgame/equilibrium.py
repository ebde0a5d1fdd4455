"""Operator Nash seeking with two-point updates, and a learned map from policy to equilibrium."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .assignment import FlowState, GapStats, UESolverParams, solve_ue
from .demand import Demand
from .municipality import (
    SUMMARY_FIELDS, FlowSummary, MunicipalParams, Policy, PolicyBounds, j_components, summarize,
)
from .network import MultimodalGraph
from .operators import (
    PT_COSTS, PT_FIELDS, TX_COSTS, TX_FIELDS, AccessModelParams, OperatorCostParams, PtStrategy,
    StrategyBounds, TxStrategy, apply_strategies, objective_pt, objective_tx, project_pt, project_tx,
)
from .zo import ZOParams, zo_step

log = logging.getLogger(__name__)


class Game(Protocol):
    """A game between operators, parameterized by a policy.

    Strategies are handled in the coordinates the two-point updates act on.
    """

    n_players: int

    def project(self, k: int, x: np.ndarray, z: Policy) -> np.ndarray: ...

    def cost(self, k: int, profile: Sequence[np.ndarray], z: Policy) -> float: ...


@dataclass
class QuadraticDuopoly:
    """``f_k = (x_k - target_k)^2 + coupling * x_1 x_2`` on a box; a test bed with a known Nash point."""

    targets: tuple[float, float] = (1.0, 2.0)
    coupling: float = 0.1
    lower: float = 0.0
    upper: float = 5.0
    n_players: int = 2

    def project(self, k, x, z=None):
        return np.clip(x, self.lower, self.upper)

    def cost(self, k, profile, z=None):
        x1, x2 = float(profile[0][0]), float(profile[1][0])
        own = (x1, x2)[k]
        return (own - self.targets[k]) ** 2 + self.coupling * x1 * x2

    def best_response(self, k: int, other: float) -> float:
        return float(np.clip(self.targets[k] - 0.5 * self.coupling * other, self.lower, self.upper))

    def nash_point(self, tol: float = 1e-14, max_iter: int = 10_000) -> np.ndarray:
        """Fixed point of simultaneous best responses."""
        x = np.array([self.lower, self.lower], dtype=float)
        for _ in range(max_iter):
            nxt = np.array([self.best_response(0, x[1]), self.best_response(1, x[0])])
            if np.max(np.abs(nxt - x)) < tol:
                return nxt
            x = nxt
        raise RuntimeError("best-response iteration did not converge")


@dataclass
class MobilityGame:
    """PT and taxi operators competing on a network whose travelers settle at user equilibrium.

    Strategies are scaled by their upper bounds, so prices live in [0, 1]; the
    fleet is divided by ``fleet_scale`` instead, since the license bound is far
    above any sensible fleet on a small network. Operator objectives are
    divided by ``objective_scale`` (CHF/h) before they reach the update rule.
    Each evaluation warm-starts Frank-Wolfe from the previous one; ``reset``
    drops that state.
    """

    template: MultimodalGraph
    demand: Demand
    bounds: StrategyBounds = field(default_factory=StrategyBounds)
    pt_costs: OperatorCostParams = PT_COSTS
    tx_costs: OperatorCostParams = TX_COSTS
    access: AccessModelParams = field(default_factory=AccessModelParams)
    ue_params: UESolverParams = field(default_factory=lambda: UESolverParams(epsilon=1e-3, max_iterations=200))
    objective_scale: float = 100.0
    fleet_scale: float = 100.0
    n_players: int = 2
    ue_failures: int = 0
    _warm: FlowState | None = field(default=None, repr=False)
    _cache: tuple | None = field(default=None, repr=False)

    @property
    def scales(self) -> tuple[np.ndarray, np.ndarray]:
        s_tx = self.bounds.tx.as_array()
        s_tx[0] = self.fleet_scale
        return self.bounds.pt.as_array(), s_tx

    def encode(self, x_pt: PtStrategy, x_tx: TxStrategy) -> list[np.ndarray]:
        s_pt, s_tx = self.scales
        return [x_pt.as_array() / s_pt, x_tx.as_array() / s_tx]

    def decode(self, profile: Sequence[np.ndarray]) -> tuple[PtStrategy, TxStrategy]:
        s_pt, s_tx = self.scales
        return PtStrategy.from_array(profile[0] * s_pt), TxStrategy.from_array(profile[1] * s_tx)

    def reset(self) -> None:
        self._warm = None
        self._cache = None

    def project(self, k: int, x: np.ndarray, z: Policy) -> np.ndarray:
        s = self.scales[k]
        if k == 0:
            return project_pt(PtStrategy.from_array(x * s), self.bounds).as_array() / s
        return project_tx(TxStrategy.from_array(x * s), self.bounds, z.license).as_array() / s

    def respond(self, x_pt: PtStrategy, x_tx: TxStrategy) -> tuple[MultimodalGraph, FlowState, GapStats]:
        """Labeled network and the travelers' equilibrium for fixed strategies."""
        key = (tuple(x_pt.as_array()), tuple(x_tx.as_array()))
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1]
        graph = apply_strategies(self.template, x_pt, x_tx, self.access)
        flows, stats = solve_ue(graph, self.demand, self.ue_params, warm_start=self._warm)
        if not stats.converged:
            self.ue_failures += 1
        self._warm = flows
        self._cache = (key, (graph, flows, stats))
        return graph, flows, stats

    def operator_objectives(self, x_pt: PtStrategy, x_tx: TxStrategy, z: Policy) -> tuple[float, float]:
        graph, flows, _ = self.respond(x_pt, x_tx)
        return (objective_pt(x_pt, flows, graph, z, self.pt_costs),
                objective_tx(x_tx, flows, graph, z, self.tx_costs))

    def cost(self, k: int, profile: Sequence[np.ndarray], z: Policy) -> float:
        x_pt, x_tx = self.decode(profile)
        graph, flows, _ = self.respond(x_pt, x_tx)
        if k == 0:
            val = objective_pt(x_pt, flows, graph, z, self.pt_costs)
        else:
            val = objective_tx(x_tx, flows, graph, z, self.tx_costs)
        return val / self.objective_scale


@dataclass
class StepRecord:
    round: int
    player: int
    iteration: int
    x: np.ndarray
    f_plus: float
    f_minus: float
    x_next: np.ndarray
    failed: bool
    ue_failures: int


@dataclass
class EquilibriumResult:
    profile: list[np.ndarray]
    converged: bool
    trace: list[StepRecord]
    x_pt: PtStrategy | None = None
    x_tx: TxStrategy | None = None
    flows: FlowState | None = None
    graph: MultimodalGraph | None = None
    gap: GapStats | None = None
    last_move: float = np.inf  # max coordinate change over the final round


def seek_mne(game: Game, z: Policy, x0: Sequence[np.ndarray] | tuple[PtStrategy, TxStrategy] | None = None,
             params: ZOParams = ZOParams()) -> EquilibriumResult:
    """Round-robin projected two-point play until strategies settle.

    In each of ``params.rounds`` rounds every player in turn takes
    ``params.iterations`` steps against the others' current strategies.
    ``rounds=1`` is one pass of per-operator descent.
    """
    if isinstance(game, MobilityGame):
        game.reset()
        if x0 is None:
            x0 = (PtStrategy(), TxStrategy())
        if isinstance(x0[0], PtStrategy):
            x0 = game.encode(*x0)
    if x0 is None:
        raise ValueError("initial strategies required")
    profile = [game.project(k, np.asarray(x, dtype=float), z) for k, x in enumerate(x0)]
    rng = np.random.default_rng(params.seed)
    trace: list[StepRecord] = []
    move = np.inf
    for rnd in range(params.rounds):
        start = [p.copy() for p in profile]
        for k in range(game.n_players):
            def objective(xk: np.ndarray, k=k) -> float:
                trial = list(profile)
                trial[k] = xk
                return game.cost(k, trial, z)

            project = lambda x, k=k: game.project(k, x, z)  # noqa: E731
            for t in range(params.iterations):
                step = zo_step(profile[k], objective, params, project, rng)
                profile[k] = step.x_next
                trace.append(StepRecord(rnd, k, t, step.x, step.f_plus, step.f_minus, step.x_next,
                                        step.failed, getattr(game, "ue_failures", 0)))
        move = max(float(np.max(np.abs(p - s))) for p, s in zip(profile, start))
    result = EquilibriumResult(profile, bool(move < params.tolerance), trace, last_move=move)
    if isinstance(game, MobilityGame):
        x_pt, x_tx = game.decode(profile)
        graph, flows, gap = game.respond(x_pt, x_tx)
        result.x_pt, result.x_tx, result.flows, result.graph, result.gap = x_pt, x_tx, flows, graph, gap
    return result


class ExactEvaluator:
    """``J(z)`` from a fresh operator equilibrium at every query.

    The inner two-point play always starts from ``x0`` with the same seed, so the
    returned value is a deterministic function of the policy.
    """

    name = "exact"

    def __init__(self, game: MobilityGame, params: MunicipalParams, zo_params: ZOParams,
                 x0: tuple[PtStrategy, TxStrategy] | None = None):
        self.game = game
        self.params = params
        self.zo_params = zo_params
        self.x0 = x0 or (PtStrategy(), TxStrategy())
        self.calls = 0

    def equilibrium(self, z: Policy) -> EquilibriumResult:
        return seek_mne(self.game, z, self.x0, self.zo_params)

    def __call__(self, z: Policy) -> float:
        self.calls += 1
        res = self.equilibrium(z)
        summary = summarize(res.x_pt, res.x_tx, res.flows, res.graph)
        return j_components(z, summary, self.params).total


# ---------------------------------------------------------------------------
# offline dataset of equilibria

@dataclass
class MNERecord:
    sample_id: int
    z: Policy
    x_pt: PtStrategy
    x_tx: TxStrategy
    summary: FlowSummary
    j_welfare: float
    j_emissions: float
    j_revenue: float
    j_total: float
    converged: bool


def _one_sample(args) -> MNERecord | None:
    game, params, zo_params, bounds, x0, sample_id, seed_seq = args
    z = bounds.denormalize(np.random.default_rng(seed_seq).uniform(size=5))
    try:
        res = seek_mne(game, z, x0, zo_params)
    except (RuntimeError, ValueError, ArithmeticError) as exc:
        log.warning("sample %d failed: %s", sample_id, exc)
        return None
    summary = summarize(res.x_pt, res.x_tx, res.flows, res.graph)
    jc = j_components(z, summary, params)
    return MNERecord(sample_id, z, res.x_pt, res.x_tx, summary, jc.welfare, jc.emissions, jc.revenue,
                     jc.total, res.converged)


def sample_mne_dataset(game: MobilityGame, params: MunicipalParams, n_samples: int, zo_params: ZOParams,
                       bounds: PolicyBounds = PolicyBounds(), seed: int = 0,
                       existing: Sequence[MNERecord] = (), workers: int = 1,
                       x0: tuple[PtStrategy, TxStrategy] | None = None) -> list[MNERecord]:
    """Equilibria at uniformly drawn policies.

    Sample ``i`` draws its policy from its own child seed; the operator play
    starts from ``x0`` with ``zo_params.seed`` exactly as in ``ExactEvaluator``,
    so each record is the exact evaluator's equilibrium at that policy. Results
    do not depend on ``workers``, and a partial run can be resumed by passing
    its records as ``existing``. Failed samples are logged and left out.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x0 = x0 or (PtStrategy(), TxStrategy())
    children = np.random.SeedSequence(seed).spawn(n_samples)
    done = {r.sample_id: r for r in existing}
    todo = [(game, params, zo_params, bounds, x0, i, children[i]) for i in range(n_samples) if i not in done]
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fresh = list(pool.map(_one_sample, todo, chunksize=max(1, len(todo) // (4 * workers))))
    else:
        fresh = [_one_sample(a) for a in todo]
    for rec in fresh:
        if rec is not None:
            done[rec.sample_id] = rec
    return [done[i] for i in sorted(done)]


DATASET_COLUMNS = (
    ("sample_id",)
    + tuple(f"z_{n}" for n in Policy.__dataclass_fields__)
    + tuple(f"x_pt_{n}" for n in PT_FIELDS)
    + tuple(f"x_tx_{n}" for n in TX_FIELDS)
    + SUMMARY_FIELDS
    + ("j_welfare", "j_emissions", "j_revenue", "j_total", "converged")
)


def write_dataset(records: Sequence[MNERecord], path, header: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(DATASET_COLUMNS)
        for r in records:
            w.writerow([r.sample_id, *map(float, r.z.as_array()), *map(float, r.x_pt.as_array()),
                        *map(float, r.x_tx.as_array()), *map(float, r.summary.as_array()),
                        float(r.j_welfare), float(r.j_emissions), float(r.j_revenue), float(r.j_total),
                        int(r.converged)])


def read_dataset(path) -> list[MNERecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    out = []
    for row in rows:
        get = lambda names, prefix: [float(row[prefix + n]) for n in names]  # noqa: E731
        out.append(MNERecord(
            int(row["sample_id"]),
            Policy.from_array(get(Policy.__dataclass_fields__, "z_")),
            PtStrategy.from_array(get(PT_FIELDS, "x_pt_")),
            TxStrategy.from_array(get(TX_FIELDS, "x_tx_")),
            FlowSummary.from_array(get(SUMMARY_FIELDS, "")),
            float(row["j_welfare"]), float(row["j_emissions"]), float(row["j_revenue"]),
            float(row["j_total"]), bool(int(row["converged"])),
        ))
    return out


# ---------------------------------------------------------------------------
# surrogate of the policy -> equilibrium map

N_STRATEGY_OUTPUTS = len(PT_FIELDS) + len(TX_FIELDS)


@dataclass
class SurrogateModel:
    """One-hidden-layer tanh network with standardized inputs and outputs.

    Outputs are the nine operator decisions followed by the flow summary.
    A model with no hidden weights is a constant predictor.
    """

    hidden: int
    weights: list[np.ndarray]  # [W1, b1, W2, b2]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    train_loss: float = 0.0
    constant: bool = False

    def predict_raw(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        if self.constant:
            return np.repeat(self.y_mean[None, :], len(inputs), axis=0)
        w1, b1, w2, b2 = self.weights
        h = np.tanh(((inputs - self.x_mean) / self.x_std) @ w1 + b1)
        return (h @ w2 + b2) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {
            "architecture": {"hidden": self.hidden, "activation": "tanh",
                             "inputs": list(Policy.__dataclass_fields__),
                             "outputs": [f"x_pt_{n}" for n in PT_FIELDS] + [f"x_tx_{n}" for n in TX_FIELDS]
                             + list(SUMMARY_FIELDS)},
            "normalization": {k: getattr(self, k).tolist() for k in ("x_mean", "x_std", "y_mean", "y_std")},
            "weights": [w.tolist() for w in self.weights],
            "train_loss": self.train_loss,
            "constant": self.constant,
        }

    @classmethod
    def from_dict(cls, data: dict) -> SurrogateModel:
        norm = data["normalization"]
        return cls(
            hidden=int(data["architecture"]["hidden"]),
            weights=[np.asarray(w, dtype=float) for w in data["weights"]],
            train_loss=float(data.get("train_loss", 0.0)),
            constant=bool(data.get("constant", False)),
            **{k: np.asarray(norm[k], dtype=float) for k in ("x_mean", "x_std", "y_mean", "y_std")},
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> SurrogateModel:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class TrainParams:
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 2000
    l2: float = 1e-5
    seed: int = 0


def dataset_arrays(records: Sequence[MNERecord]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([r.z.as_array() for r in records])
    Y = np.array([np.concatenate([r.x_pt.as_array(), r.x_tx.as_array(), r.summary.as_array()])
                  for r in records])
    return X, Y


def fit_surrogate(X: np.ndarray, Y: np.ndarray, hidden: int = 32,
                  train: TrainParams = TrainParams()) -> SurrogateModel:
    """Fit the regressor on inputs ``X`` (n, d_in) and targets ``Y`` (n, d_out).

    Constant targets yield a constant predictor (``constant=True``, with a warning).
    """
    from sklearn.neural_network import MLPRegressor

    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    if len(X) < 10:
        raise ValueError(f"need at least 10 records to fit, got {len(X)}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("non-finite values in training data")
    x_mean, x_std = X.mean(axis=0), X.std(axis=0)
    y_mean, y_std = Y.mean(axis=0), Y.std(axis=0)
    x_std[x_std < 1e-12] = 1.0
    if np.all(y_std < 1e-12):
        warnings.warn("training targets have zero variance; fitting a constant predictor", stacklevel=2)
        return SurrogateModel(0, [], x_mean, x_std, y_mean, np.ones_like(y_std), 0.0, constant=True)
    y_std[y_std < 1e-12] = 1.0
    net = MLPRegressor(
        hidden_layer_sizes=(hidden,), activation="tanh", solver="adam", alpha=train.l2,
        batch_size=min(train.batch_size, len(X)), learning_rate_init=train.learning_rate,
        max_iter=train.epochs, tol=1e-9, n_iter_no_change=200, random_state=train.seed, shuffle=True,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # ConvergenceWarning at max_iter is expected
        net.fit((X - x_mean) / x_std, (Y - y_mean) / y_std)
    weights = [net.coefs_[0], net.intercepts_[0], net.coefs_[1], net.intercepts_[1]]
    return SurrogateModel(hidden, weights, x_mean, x_std, y_mean, y_std, float(net.loss_))


def fit_surrogate_from_records(records: Sequence[MNERecord], hidden: int = 32,
                               train: TrainParams = TrainParams()) -> SurrogateModel:
    return fit_surrogate(*dataset_arrays(records), hidden=hidden, train=train)


def surrogate_predict(model: SurrogateModel, z: Policy, bounds: StrategyBounds = StrategyBounds()
                      ) -> tuple[PtStrategy, TxStrategy, FlowSummary]:
    """Predicted equilibrium, with strategies mapped back into their feasible sets."""
    out = model.predict_raw(z.as_array())[0]
    x_pt = project_pt(PtStrategy.from_array(out[:4]), bounds)
    x_tx = project_tx(TxStrategy.from_array(out[4:N_STRATEGY_OUTPUTS]), bounds, z.license)
    summary = FlowSummary.from_array(np.maximum(out[N_STRATEGY_OUTPUTS:], 0.0))
    return x_pt, x_tx, summary


class SurrogateEvaluator:
    name = "surrogate"

    def __init__(self, model: SurrogateModel, params: MunicipalParams, bounds: StrategyBounds = StrategyBounds()):
        self.model = model
        self.params = params
        self.bounds = bounds
        self.calls = 0

    def __call__(self, z: Policy) -> float:
        self.calls += 1
        _, _, summary = surrogate_predict(self.model, z, self.bounds)
        return j_components(z, summary, self.params).total
