"""Acceptance checks 1-11, one verdict line each.

Run with pytest (verdicts are also repeated in the terminal summary) or
directly with ``python tests/test_acceptance.py``. Criterion 9 plays thirty
full optimizer runs on the bundled grid and takes roughly a quarter of an hour.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from acceptance_report import record
from mobgame.assignment import UESolverParams, brute_force_ue, solve_ue, wardrop_excess
from mobgame.baselines import genetic_algorithm, random_search
from mobgame.cli import main as cli_main
from mobgame.equilibrium import (
    ExactEvaluator, QuadraticDuopoly, SurrogateEvaluator, dataset_arrays, fit_surrogate, sample_mne_dataset, seek_mne,
)
from mobgame.instances import ORACLE_INSTANCES, PIGOU_ROUTE_A, PIGOU_ROUTE_B
from mobgame.municipality import Policy, PolicyBounds, optimize_policy, summarize
from mobgame.network import ScenarioParams, build_grid_scenario
from mobgame.demand import generate_demand
from mobgame.operators import PT_FIELDS, TX_FIELDS
from mobgame.scenario import load_scenario
from mobgame.zo import ZOParams, box_projector, two_point_gradient, zo_step

N_STRATEGY = len(PT_FIELDS) + len(TX_FIELDS)


@pytest.fixture(scope="module")
def grid():
    return load_scenario("grid")


def test_criterion_01_pigou():
    sc = load_scenario("pigou")
    start = time.perf_counter()
    flows, stats = solve_ue(sc.graph, sc.demand, sc.solvers.ue)
    elapsed = time.perf_counter() - start
    q = sc.demand.total
    err = max(abs(flows.total[PIGOU_ROUTE_B] - 100.0), abs(flows.total[PIGOU_ROUTE_A] - 50.0))
    ok = err <= 0.01 * q and stats.rel_gap < 1e-4 and elapsed < 1.0
    record(1, ok, f"flow error {err:.3g} (limit {0.01 * q:g}), rel gap {stats.rel_gap:.2e}, {elapsed * 1e3:.1f} ms")
    assert ok


def test_criterion_02_oracle_equivalence():
    worst = {}
    for name, (make_graph, make_demand) in sorted(ORACLE_INSTANCES.items()):
        g, d = make_graph(), make_demand()
        flows, _ = solve_ue(g, d, UESolverParams(epsilon=1e-5))
        ref = brute_force_ue(g, d, resolution=1e-3)
        worst[name] = float(np.max(np.abs(flows.total - ref.total))) / d.total
    ok = len(worst) >= 3 and max(worst.values()) <= 0.01
    record(2, ok, "max |y - y_ref| / q: " + ", ".join(f"{k} {v:.2%}" for k, v in worst.items()))
    assert ok


def test_criterion_03_wardrop():
    eps = 1e-4
    worst = {}
    for name, (make_graph, make_demand) in sorted(ORACLE_INSTANCES.items()):
        g, d = make_graph(), make_demand()
        flows, stats = solve_ue(g, d, UESolverParams(epsilon=eps))
        worst[name] = float(np.max(wardrop_excess(g, d, flows, threshold=1e-6))) if stats.converged else np.inf
    ok = max(worst.values()) <= 10 * eps
    record(3, ok, f"worst used-path excess / shortest (limit {10 * eps:g}): "
           + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


def test_criterion_04_descent():
    rng = np.random.default_rng(4)
    bad = 0
    for k in range(100):
        rows, cols = rng.integers(2, 5, size=2)
        params = ScenarioParams(taxi_capacity=float(rng.uniform(5, 80)), length_jitter=float(rng.uniform(0, 0.5)),
                                pt_rows=(int(rng.integers(rows)),))
        g = build_grid_scenario(int(rows), int(cols), params, seed=k)
        d = generate_demand(g, int(rng.integers(1, 15)), seed=k, volume_range=(5.0, 60.0))
        trace = []
        solve_ue(g, d, UESolverParams(epsilon=1e-6, max_iterations=60), trace=trace)
        vals = [r.beckmann for r in trace]
        bad += any(b > a + 1e-9 * max(1.0, abs(a)) for a, b in zip(vals, vals[1:]))
    ok = bad == 0
    record(4, ok, f"objective increased in {bad} of 100 random grid runs")
    assert ok


def test_criterion_05_estimator():
    A = np.array([[3.0, 0.5, 0.0], [0.5, 2.0, -0.4], [0.0, -0.4, 1.0]])
    b = np.array([1.0, -2.0, 0.5])
    f = lambda x: float(x @ A @ x + b @ x)  # noqa: E731
    x0 = np.array([0.4, -0.3, 1.2])
    grad = 2 * A @ x0 + b
    rng = np.random.default_rng(5)
    delta = 0.01
    draws = np.array([two_point_gradient(f(x0 + delta * v), f(x0 - delta * v), v, delta)
                      for v in rng.standard_normal((10_000, 3))])
    rel = float(np.linalg.norm(draws.mean(axis=0) - grad) / np.linalg.norm(grad))
    c = np.array([2.0, -1.0, 0.5])
    lin_err = 0.0
    for v in rng.standard_normal((100, 3)):
        for dlt in (1e-3, 0.1, 3.0):
            est = (c @ (x0 + dlt * v) - c @ (x0 - dlt * v)) / (2 * dlt)
            lin_err = max(lin_err, abs(est - c @ v) / max(1.0, abs(c @ v)))
    ok = rel < 0.05 and lin_err < 1e-12
    record(5, ok, f"mean-estimate relative error {rel:.2%}; linear directional error {lin_err:.1e}")
    assert ok


def test_criterion_06_constrained_descent():
    f1 = lambda x: float((x[0] - 3.0) ** 2)  # noqa: E731
    params = ZOParams(eta=0.25, delta=0.01)

    def run_1d(hi, seed):
        rng, proj, x = np.random.default_rng(seed), box_projector([0.0], [hi]), np.array([0.0])
        for _ in range(200):
            x = zo_step(x, f1, params, proj, rng).x_next
        return x[0]

    err_in = float(np.median([abs(run_1d(10.0, s) - 3.0) for s in range(10)]))
    err_face = float(np.median([abs(run_1d(2.0, s) - 2.0) for s in range(10)]))

    box = PolicyBounds(Policy(0.0, 0.0, 0.0, 0.0, 0.0), Policy(1.0, 1.0, 1.0, 1.0, 1.0))
    target = np.array([0.3, 0.6, 0.5, 0.2, 0.7])
    quad = lambda z: float(np.sum((z.as_array() - target) ** 2))  # noqa: E731
    dists = [np.linalg.norm(optimize_policy(quad, box.denormalize(np.full(5, 0.5)),
                                            ZOParams(eta=0.2, delta=0.01, iterations=300, seed=s), box)
                            .best.as_array() - target) for s in range(10)]
    err_5d = float(np.median(dists))
    ok = err_in < 1e-2 and err_face < 1e-2 and err_5d < 0.1
    record(6, ok, f"1-D interior {err_in:.1e}, 1-D face {err_face:.1e} (limit 1e-2; 200 steps); "
           f"5-D best-so-far median {err_5d:.3f} (limit 0.1; 300 steps)")
    assert ok


def test_criterion_07_nash():
    game = QuadraticDuopoly()
    res = seek_mne(game, None, [np.array([0.0]), np.array([0.0])])
    got = np.array([res.profile[0][0], res.profile[1][0]])
    dist = float(np.linalg.norm(got - game.nash_point()))
    ok = dist < 0.05
    record(7, ok, f"distance to fixed-point Nash {np.round(game.nash_point(), 4).tolist()}: {dist:.2e}")
    assert ok


def test_criterion_08_integration_incentive(grid):
    pol = grid.require_policy()
    game = grid.game()
    e12 = {}
    for sigma in (pol.bounds.lower.subsidy_tx, pol.bounds.upper.subsidy_tx):
        z = Policy(**{**pol.initial.__dict__, "subsidy_tx": sigma})
        res = seek_mne(game, z, grid.operators.initial, grid.solvers.mne)
        e12[sigma] = summarize(res.x_pt, res.x_tx, res.flows, res.graph).transfers_tx
    lo, hi = e12.values()
    need = 0.01 * grid.demand.total
    ok = hi - lo >= need
    record(8, ok, f"PT->taxi transfers {lo:.1f} -> {hi:.1f} /h as subsidy goes "
           f"{min(e12):g} -> {max(e12):g} CHF (needed +{need:g})")
    assert ok


def test_criterion_09_optimizer_comparison(grid):
    pol, sv = grid.require_policy(), grid.solvers
    evaluator = ExactEvaluator(grid.game(), pol.municipal, sv.mne, grid.operators.initial)
    budget = max(sv.budget, 600)
    wins, rows = 0, []
    start = time.perf_counter()
    for seed in range(10):
        params = ZOParams(**{**sv.policy.__dict__, "seed": seed})
        fb = optimize_policy(evaluator, pol.initial, params, pol.bounds, budget,
                             objective_scale=sv.policy_objective_scale)
        ga = genetic_algorithm(evaluator, pol.bounds, sv.ga, budget, seed=seed)
        rs = random_search(evaluator, pol.bounds, budget, seed=seed)
        assert fb.evaluations == ga.evaluations == rs.evaluations == budget
        won = fb.best_value <= min(ga.best_value, rs.best_value)
        wins += won
        rows.append(f"{fb.best_value:.0f}/{ga.best_value:.0f}/{rs.best_value:.0f}")
    elapsed = time.perf_counter() - start
    ok = wins >= 7 and elapsed < 1800
    record(9, ok, f"feedback best <= GA and random in {wins}/10 runs of {budget} evaluations, "
           f"{elapsed / 60:.1f} min; best J feedback/GA/random: {' '.join(rows)}")
    assert ok


def test_criterion_10_surrogate(grid):
    pol, sv = grid.require_policy(), grid.solvers
    game = grid.game()
    records = sample_mne_dataset(game, pol.municipal, 200, sv.mne, pol.bounds, seed=grid.seed,
                                 x0=grid.operators.initial)
    X, Y = dataset_arrays(records)
    order = np.random.default_rng(10).permutation(len(X))
    train, test = order[:160], order[160:]
    model = fit_surrogate(X[train], Y[train], sv.hidden, sv.train)
    pred = model.predict_raw(X[test])[:, :N_STRATEGY]
    truth = Y[test, :N_STRATEGY]
    span = Y[:, :N_STRATEGY].max(axis=0) - Y[:, :N_STRATEGY].min(axis=0)
    varied = span > 1e-9
    nrmse = float(np.mean(np.sqrt(np.mean((pred - truth) ** 2, axis=0))[varied] / span[varied]))

    exact = ExactEvaluator(game, pol.municipal, sv.mne, grid.operators.initial)
    approx = SurrogateEvaluator(model, pol.municipal, grid.operators.bounds)
    rng = np.random.default_rng(11)
    agree, n_pairs = 0, 40
    for _ in range(n_pairs):
        a, b = (pol.bounds.denormalize(rng.uniform(size=5)) for _ in range(2))
        agree += np.sign(exact(a) - exact(b)) == np.sign(approx(a) - approx(b))
    share = agree / n_pairs
    ok = len(records) == 200 and nrmse < 0.15 and share >= 0.8
    record(10, ok, f"held-out strategy NRMSE {nrmse:.1%} (limit 15%), "
           f"sign agreement {agree}/{n_pairs} = {share:.0%} (limit 80%)")
    assert ok


def _run_all(out: Path, workers: int) -> dict[str, bytes]:
    common = ["--scenario", "grid", "--seed", "3", "--workers", str(workers)]
    steps = [
        ["assign", "--out", out / "assign"],
        ["mne", "--out", out / "mne"],
        ["dataset", "--n", "12", "--out", out / "data"],
        ["train", "--dataset", out / "data" / "dataset.csv", "--out", out / "train"],
        ["optimize", "--method", "feedback", "--budget", "20", "--out", out / "opt"],
        ["optimize", "--method", "ga", "--budget", "30", "--out", out / "opt"],
        ["optimize", "--method", "random", "--budget", "10", "--out", out / "opt"],
        ["optimize", "--evaluator", "surrogate", "--surrogate", out / "train" / "surrogate.json",
         "--budget", "50", "--out", out / "sur"],
    ]
    for cmd, *rest in steps:
        assert cli_main([cmd, *common, *map(str, rest)]) == 0, cmd
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


def test_criterion_11_determinism(tmp_path):
    first = _run_all(tmp_path / "a", workers=1)
    again = _run_all(tmp_path / "b", workers=1)
    parallel = _run_all(tmp_path / "c", workers=2)
    differing = sorted(k for k in first if not (first[k] == again.get(k) == parallel.get(k)))
    ok = not differing and set(first) == set(again) == set(parallel)
    record(11, ok, f"{len(first)} output files from 8 commands byte-identical across reruns and worker counts"
           if ok else f"differing outputs: {differing}")
    assert ok


if __name__ == "__main__":
    import sys

    raise SystemExit(pytest.main([__file__, "-q", *sys.argv[1:]]))
