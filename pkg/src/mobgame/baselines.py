"""Budget-matched baselines over the policy box: random search and a real-coded GA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .municipality import Evaluator, OptimizationResult, PolicyBounds, PolicyStep


@dataclass(frozen=True)
class GAParams:
    population: int = 20
    generations: int | None = None  # None: as many as the budget allows
    crossover_rate: float = 0.9
    mutation_rate: float = 0.2
    mutation_scale: float = 0.1  # fraction of the box width

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if not (0 <= self.crossover_rate <= 1 and 0 <= self.mutation_rate <= 1):
            raise ValueError("rates must lie in [0, 1]")


class _Counter:
    """Wraps the evaluator in normalized coordinates and keeps the best-so-far trace."""

    def __init__(self, evaluator: Evaluator, bounds: PolicyBounds, method: str, evaluator_name: str):
        self.evaluator, self.bounds = evaluator, bounds
        self.best_val, self.best_u = np.inf, None
        self.trace: list[PolicyStep] = []
        self.method, self.evaluator_name = method, evaluator_name

    def __call__(self, u: np.ndarray) -> float:
        u = np.clip(u, 0.0, 1.0)
        z = self.bounds.denormalize(u)
        try:
            val = float(self.evaluator(z))
        except (RuntimeError, ValueError, ArithmeticError):
            val = np.inf
        if val < self.best_val:
            self.best_val, self.best_u = val, u.copy()
        n = len(self.trace)
        self.trace.append(PolicyStep(n, z, val, np.nan, z, self.best_val, n + 1, not np.isfinite(val)))
        return val

    def result(self, final_u: np.ndarray) -> OptimizationResult:
        best = self.best_u if self.best_u is not None else final_u
        return OptimizationResult(self.method, self.bounds.denormalize(final_u), self.bounds.denormalize(best),
                                  self.best_val, len(self.trace), self.trace, self.evaluator_name)


def random_search(evaluator: Evaluator, bounds: PolicyBounds, budget: int, seed: int = 0,
                  evaluator_name: str = "exact") -> OptimizationResult:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    f = _Counter(evaluator, bounds, "random", evaluator_name)
    u = None
    for _ in range(budget):
        u = rng.uniform(size=len(bounds.width))
        f(u)
    return f.result(u)


def genetic_algorithm(evaluator: Evaluator, bounds: PolicyBounds, params: GAParams, budget: int,
                      seed: int = 0, initial_population: np.ndarray | None = None,
                      evaluator_name: str = "exact") -> OptimizationResult:
    """Real-coded GA in the normalized box.

    Binary tournament selection, uniform crossover, Gaussian mutation clipped to
    the box, and one elite carried over unchanged (and not re-evaluated). With
    ``params.generations`` unset the whole budget is spent: a last, partial
    generation replaces only the worst individuals.
    """
    pop_size = params.population
    if params.generations is None:
        if budget < pop_size:
            raise ValueError(f"budget {budget} is smaller than the population")
        limit = budget
    else:
        if params.generations < 1 or pop_size * params.generations > budget:
            raise ValueError(f"population*generations must fit in the budget ({budget})")
        limit = pop_size + (params.generations - 1) * (pop_size - 1)
    rng = np.random.default_rng(seed)
    dim = len(bounds.width)
    f = _Counter(evaluator, bounds, "ga", evaluator_name)
    if initial_population is not None:
        pop = np.clip(np.array(initial_population, dtype=float), 0.0, 1.0)
        if pop.shape != (pop_size, dim):
            raise ValueError(f"initial population must have shape {(pop_size, dim)}")
    else:
        pop = rng.uniform(size=(pop_size, dim))
    fit = np.array([f(ind) for ind in pop])
    history = [float(fit.min())]
    while len(f.trace) < limit:
        n_new = min(pop_size - 1, limit - len(f.trace))
        children = []
        while len(children) < n_new:
            parents = []
            for _ in range(2):
                i, j = rng.integers(pop_size, size=2)
                parents.append(pop[i] if fit[i] <= fit[j] else pop[j])
            child = parents[0].copy()
            if rng.uniform() < params.crossover_rate:
                take = rng.uniform(size=dim) < 0.5
                child[take] = parents[1][take]
            mutate = rng.uniform(size=dim) < params.mutation_rate
            child[mutate] += rng.normal(0.0, params.mutation_scale, size=int(mutate.sum()))
            children.append(np.clip(child, 0.0, 1.0))
        keep = np.argsort(fit, kind="stable")[:pop_size - n_new]  # the elite comes first
        pop = np.vstack([pop[keep], children])
        fit = np.concatenate([fit[keep], [f(c) for c in children]])
        history.append(float(fit.min()))
    result = f.result(pop[int(np.argmin(fit))])
    result.generation_best = history
    return result
