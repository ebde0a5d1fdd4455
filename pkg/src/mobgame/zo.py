"""Two-point zeroth-order gradient estimates and projected descent steps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ZOParams:
    eta: float = 0.25  # step size
    delta: float = 0.01  # smoothing radius
    iterations: int = 50  # steps per operator per round
    rounds: int = 5  # round-robin passes over operators
    seed: int = 0
    tolerance: float = 1e-3  # convergence: max strategy move over the last round

    def __post_init__(self):
        if not (self.eta > 0 and self.delta > 0):
            raise ValueError("eta and delta must be positive")
        if self.iterations < 1 or self.rounds < 1:
            raise ValueError("iterations and rounds must be >= 1")


@dataclass
class ZOStep:
    x: np.ndarray  # point before the step
    v: np.ndarray
    f_plus: float
    f_minus: float
    gradient: np.ndarray
    x_next: np.ndarray
    failed: bool = False


def two_point_gradient(f_plus: float, f_minus: float, v, delta: float) -> np.ndarray:
    """``v * (f(x + delta v) - f(x - delta v)) / (2 delta)``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    return np.asarray(v, dtype=float) * ((f_plus - f_minus) / (2.0 * delta))


def identity(x: np.ndarray) -> np.ndarray:
    return x


def zo_step(x, objective: Callable[[np.ndarray], float], params: ZOParams,
            projector: Callable[[np.ndarray], np.ndarray] = identity,
            rng: np.random.Generator | None = None) -> ZOStep:
    """One projected two-point step from ``x``.

    Probe points are projected before evaluation, so the objective only sees
    feasible decisions. If an evaluation raises, the step is recorded as failed
    and ``x`` is kept.
    """
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    x = np.asarray(x, dtype=float)
    v = rng.standard_normal(x.shape)
    try:
        f_plus = float(objective(projector(x + params.delta * v)))
        f_minus = float(objective(projector(x - params.delta * v)))
    except (ArithmeticError, RuntimeError, ValueError):
        return ZOStep(x, v, np.nan, np.nan, np.zeros_like(x), x.copy(), failed=True)
    g = two_point_gradient(f_plus, f_minus, v, params.delta)
    return ZOStep(x, v, f_plus, f_minus, g, projector(x - params.eta * g))


def box_projector(lower, upper) -> Callable[[np.ndarray], np.ndarray]:
    lo, hi = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    return lambda x: np.clip(x, lo, hi)
