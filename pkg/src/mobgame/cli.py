"""Command-line entry point: ``mobgame {assign,mne,dataset,train,optimize}``.

Every run is a function of (scenario file, command line, seed). Output files
start with a provenance line carrying the tool version, the master seed and
the scenario hash; wall-clock times go to standard output only, unless
``--timing`` asks for them in the files too.

Exit codes: 0 success, 1 invalid input (scenario, missing file, empty
request), 2 a solver did not converge or failed (partial results written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .assignment import UESolverParams, UnreachableError, edge_travel_times, solve_ue
from .baselines import genetic_algorithm, random_search
from .equilibrium import (
    ExactEvaluator, SurrogateEvaluator, SurrogateModel, fit_surrogate_from_records, read_dataset, sample_mne_dataset,
    seek_mne, write_dataset,
)
from .municipality import POLICY_FIELDS, Policy, optimize_policy, summarize, write_policy_trace, j_components
from .network import ScenarioError
from .operators import PT_FIELDS, TX_FIELDS, PtStrategy, TxStrategy, apply_strategies
from .scenario import Scenario, load_scenario

log = logging.getLogger("mobgame")

OK, INVALID, SOLVER = 0, 1, 2


class InputError(Exception):
    """Bad command-line input; reported on stderr with exit status 1."""


# ---------------------------------------------------------------------------
# output helpers


def provenance(seed: int, digest: str, command: str) -> list[str]:
    return [f"mobgame {__version__} command={command} seed={seed} scenario={digest}"]


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _meta(args, seed: int, digest: str) -> dict:
    return {"version": __version__, "command": args.command, "seed": seed, "scenario_hash": digest}


def _policy_section(z: Policy) -> dict:
    return {"initial": asdict(z)}


def _strategies_doc(x_pt: PtStrategy, x_tx: TxStrategy) -> dict:
    return {"pt": asdict(x_pt), "tx": asdict(x_tx)}


def _read_json(path: str | None, what: str) -> dict | None:
    if path is None:
        return None
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {what} file {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} file {path} is not valid JSON: {exc}") from exc


def _load_policy(args, scenario: Scenario) -> Policy:
    doc = _read_json(getattr(args, "policy", None), "policy")
    base = scenario.policy.initial if scenario.policy is not None else Policy()
    if doc is None:
        return base
    doc = doc.get("policy", doc)
    doc = doc.get("initial", doc)
    try:
        z = replace(base, **{k: float(v) for k, v in doc.items()})
    except TypeError as exc:
        raise InputError(f"bad policy: {exc}") from exc
    if scenario.policy is not None and not scenario.policy.bounds.contains(z):
        raise InputError(f"policy {z} lies outside the scenario's policy box")
    return z


def _load_strategies(args, scenario: Scenario) -> tuple[PtStrategy, TxStrategy] | None:
    doc = _read_json(getattr(args, "strategies", None), "strategies")
    if scenario.operators is None:
        if doc is not None:
            raise InputError("scenario has no operators section; strategies cannot be applied")
        return None
    x_pt, x_tx = scenario.operators.initial
    if doc is None:
        return x_pt, x_tx
    try:
        return replace(x_pt, **doc.get("pt", {})), replace(x_tx, **doc.get("tx", {}))
    except TypeError as exc:
        raise InputError(f"bad strategies: {exc}") from exc


def _ue_params(args, scenario: Scenario) -> UESolverParams:
    kw = {}
    if getattr(args, "epsilon", None) is not None:
        kw["epsilon"] = args.epsilon
    if getattr(args, "max_iter", None) is not None:
        kw["max_iterations"] = args.max_iter
    try:
        return replace(scenario.solvers.ue, **kw)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _zo(base, args, prefix: str = ""):
    kw = {}
    for flag, name in (("eta", "eta"), ("delta", "delta"), ("iters", "iterations")):
        val = getattr(args, flag, None)
        if val is not None:
            kw[name] = val
    try:
        return replace(base, **kw)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands


def cmd_assign(args, scenario: Scenario, seed: int, out: Path) -> int:
    strategies = _load_strategies(args, scenario)
    graph = scenario.graph
    if strategies is not None:
        graph = apply_strategies(graph, *strategies, scenario.operators.access)
    params = _ue_params(args, scenario)
    flows, stats = solve_ue(graph, scenario.demand, params)
    times = edge_travel_times(graph, flows.total)
    header = provenance(seed, scenario.digest, args.command)
    with open(out / "flows.csv", "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(("edge_id", "class", "flow", "time", "price"))
        for n, cls in enumerate(flows.classes):
            for e in range(graph.n_edges):
                w.writerow((e, cls.name, float(flows.class_flows[n, e]), float(times[e]),
                            float(graph.price[e])))
    doc = _meta(args, seed, scenario.digest)
    doc["gap"] = asdict(stats)
    doc["solver"] = asdict(params)
    if strategies is not None:
        doc["strategies"] = _strategies_doc(*strategies)
        if scenario.policy is not None:
            z = _load_policy(args, scenario)
            summary = summarize(*strategies, flows, graph)
            doc["summary"] = asdict(summary)
            doc["J"] = asdict(j_components(z, summary, scenario.policy.municipal))
    write_json(out / "assign_summary.json", doc)
    state = "converged" if stats.converged else "NOT converged"
    print(f"assign: {state} after {stats.iterations} iterations, relative gap {stats.rel_gap:.3e}")
    return OK if stats.converged else SOLVER


def cmd_mne(args, scenario: Scenario, seed: int, out: Path) -> int:
    ops = scenario.require_operators()
    z = _load_policy(args, scenario)
    params = _zo(scenario.solvers.mne, args)
    game = scenario.game(ue_params=_ue_params(args, scenario))
    result = seek_mne(game, z, ops.initial, params)
    header = provenance(seed, scenario.digest, args.command)
    width = max(len(PT_FIELDS), len(TX_FIELDS))
    with open(out / "mne_trace.csv", "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(("round", "player", "iteration", *(f"x_{i}" for i in range(width)), "f_plus", "f_minus",
                    "failed", "ue_failures"))
        for s in result.trace:
            x = (s.x_next * game.scales[s.player]).tolist()
            x += [""] * (width - len(x))
            w.writerow((s.round, ("pt", "tx")[s.player], s.iteration, *x,
                        float(s.f_plus), float(s.f_minus), int(s.failed), s.ue_failures))
    summary = summarize(result.x_pt, result.x_tx, result.flows, result.graph)
    doc = _meta(args, seed, scenario.digest)
    doc.update({
        "policy": asdict(z), "strategies": _strategies_doc(result.x_pt, result.x_tx),
        "settled": result.converged, "last_move": result.last_move, "summary": asdict(summary),
        "J": asdict(j_components(z, summary, scenario.require_policy().municipal)) if scenario.policy else None,
        "gap": asdict(result.gap), "ue_failures": game.ue_failures, "zo": asdict(params),
    })
    write_json(out / "mne_summary.json", doc)
    print(f"mne: PT {np.round(result.x_pt.as_array(), 3).tolist()} taxi {np.round(result.x_tx.as_array(), 3).tolist()}"
          f" (settled={result.converged}, UE failures={game.ue_failures})")
    return OK if result.gap.converged and game.ue_failures == 0 else SOLVER


def cmd_dataset(args, scenario: Scenario, seed: int, out: Path) -> int:
    ops = scenario.require_operators()
    pol = scenario.require_policy()
    n = scenario.solvers.dataset_samples if args.n is None else args.n
    if n < 1:
        raise InputError(f"dataset size must be >= 1, got {n}")
    game = scenario.game(ue_params=_ue_params(args, scenario))
    records = sample_mne_dataset(game, pol.municipal, n, scenario.solvers.mne, pol.bounds, seed=seed,
                                 workers=args.workers, x0=ops.initial)
    write_dataset(records, out / "dataset.csv", provenance(seed, scenario.digest, args.command))
    doc = _meta(args, seed, scenario.digest)
    doc.update({"requested": n, "written": len(records), "settled": sum(r.converged for r in records)})
    write_json(out / "dataset_summary.json", doc)
    print(f"dataset: {len(records)} of {n} samples written")
    return OK if len(records) == n else SOLVER


def cmd_train(args, scenario: Scenario | None, seed: int, out: Path) -> int:
    path = Path(args.dataset)
    if not path.exists():
        raise InputError(f"dataset file {path} does not exist")
    if scenario is not None and _dataset_digest(path) not in (scenario.digest, "unknown"):
        raise InputError(f"dataset {path} was generated from a different scenario")
    records = read_dataset(path)
    solvers = scenario.solvers if scenario is not None else None
    hidden = solvers.hidden if solvers else 32
    train = replace(solvers.train, seed=seed) if solvers else None
    kw = {"train": train} if train is not None else {}
    try:
        model = fit_surrogate_from_records(records, hidden=hidden, **kw)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    model.save(out / "surrogate.json")
    digest = scenario.digest if scenario is not None else _dataset_digest(path)
    doc = _meta(args, seed, digest)
    doc.update({"records": len(records), "hidden": model.hidden, "train_loss": model.train_loss,
                "constant": model.constant})
    write_json(out / "train_summary.json", doc)
    print(f"train: {len(records)} records, final loss {model.train_loss:.4g}")
    return OK


def _dataset_digest(path: Path) -> str:
    with open(path) as fh:
        first = fh.readline()
    for token in first.split():
        if token.startswith("scenario="):
            return token.split("=", 1)[1]
    return "unknown"


def cmd_optimize(args, scenario: Scenario, seed: int, out: Path) -> int:
    ops = scenario.require_operators()
    pol = scenario.require_policy()
    budget = scenario.solvers.budget if args.budget is None else args.budget
    if budget < 1:
        raise InputError(f"budget must be >= 1, got {budget}")
    if args.evaluator == "surrogate":
        if args.surrogate is None:
            raise InputError("--evaluator surrogate needs --surrogate MODEL")
        if not Path(args.surrogate).exists():
            raise InputError(f"surrogate file {args.surrogate} does not exist")
        evaluator = SurrogateEvaluator(SurrogateModel.load(args.surrogate), pol.municipal, ops.bounds)
        game = None
    else:
        game = scenario.game(ue_params=_ue_params(args, scenario))
        evaluator = ExactEvaluator(game, pol.municipal, scenario.solvers.mne, ops.initial)
    z0 = _load_policy(args, scenario)
    if args.method == "feedback":
        params = replace(_zo(scenario.solvers.policy, args), seed=seed)
        result = optimize_policy(evaluator, z0, params, pol.bounds, budget, args.evaluator, timing=args.timing,
                                 objective_scale=scenario.solvers.policy_objective_scale)
    elif args.method == "ga":
        result = genetic_algorithm(evaluator, pol.bounds, scenario.solvers.ga, budget, seed, evaluator_name=args.evaluator)
    else:
        result = random_search(evaluator, pol.bounds, budget, seed, evaluator_name=args.evaluator)
    stem = f"optimize_{args.method}"
    write_policy_trace(result, out / f"{stem}_trace.csv", provenance(seed, scenario.digest, args.command))
    failed = sum(1 for s in result.trace if s.skipped)
    ue_failures = game.ue_failures if game is not None else 0
    doc = _meta(args, seed, scenario.digest)
    doc.update({
        "method": result.method, "evaluator": result.evaluator, "budget": budget,
        "evaluations": result.evaluations, "best_value": result.best_value,
        "best": {"policy": _policy_section(result.best)}, "final": {"policy": _policy_section(result.final)},
        "skipped": failed, "ue_failures": ue_failures,
    })
    write_json(out / f"{stem}_summary.json", doc)
    print(f"optimize[{args.method}, {args.evaluator}]: best J {result.best_value:.6g} after "
          f"{result.evaluations} evaluations")
    return SOLVER if failed or ue_failures or not np.isfinite(result.best_value) else OK


COMMANDS = {"assign": cmd_assign, "mne": cmd_mne, "dataset": cmd_dataset, "train": cmd_train,
            "optimize": cmd_optimize}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON file, or a bundled name (pigou, grid)")
    common.add_argument("--seed", type=int, help="master seed (default: the scenario's)")
    common.add_argument("--out", default="out", help="output directory (created if missing)")
    common.add_argument("--workers", type=int, default=1, help="process cap; never changes results")
    common.add_argument("--timing", action="store_true", help="also write wall-clock times into output files")
    common.add_argument("-v", "--verbose", action="store_true")

    ue = argparse.ArgumentParser(add_help=False)
    ue.add_argument("--epsilon", type=float, help="relative-gap tolerance of the traffic assignment")
    ue.add_argument("--max-iter", type=int, help="iteration cap of the traffic assignment")

    zo = argparse.ArgumentParser(add_help=False)
    zo.add_argument("--eta", type=float, help="two-point step size")
    zo.add_argument("--delta", type=float, help="two-point smoothing radius")
    zo.add_argument("--iters", type=int, help="two-point iterations")

    p = argparse.ArgumentParser(prog="mobgame", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"mobgame {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("assign", parents=[common, ue], help="traffic assignment for fixed strategies")
    a.add_argument("--strategies", help="JSON with 'pt' and 'tx' strategy fields")
    a.add_argument("--policy", help="JSON policy (fields of the policy section)")

    m = sub.add_parser("mne", parents=[common, ue, zo], help="operator equilibrium at a policy")
    m.add_argument("--policy", help="JSON policy (fields of the policy section)")

    d = sub.add_parser("dataset", parents=[common, ue], help="sample operator equilibria over the policy box")
    d.add_argument("--n", type=int, help="number of samples (default: the scenario's)")

    t = sub.add_parser("train", parents=[common], help="fit the surrogate to a dataset")
    t.add_argument("--dataset", required=True, help="dataset CSV written by 'dataset'")

    o = sub.add_parser("optimize", parents=[common, ue, zo], help="optimize the municipal policy")
    o.add_argument("--method", choices=("feedback", "ga", "random"), default="feedback")
    o.add_argument("--evaluator", choices=("exact", "surrogate"), default="exact")
    o.add_argument("--surrogate", help="model written by 'train' (for --evaluator surrogate)")
    o.add_argument("--budget", type=int, help="objective evaluations (default: the scenario's)")
    o.add_argument("--policy", help="initial policy JSON (feedback method)")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        if args.workers < 1:
            raise InputError("--workers must be >= 1")
        scenario = None
        if args.scenario is not None:
            scenario = load_scenario(args.scenario)
        elif args.command != "train":
            raise InputError("--scenario is required")
        seed = args.seed if args.seed is not None else (scenario.seed if scenario is not None else 0)
        if seed < 0:
            raise InputError("--seed must be >= 0")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        status = COMMANDS[args.command](args, scenario, seed, out)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID
    except (UnreachableError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID
    print(f"wall time {time.perf_counter() - started:.2f} s")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
