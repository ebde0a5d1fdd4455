import csv
import json

import pytest

from mobgame.cli import INVALID, OK, SOLVER, main
from mobgame.instances import PIGOU_ROUTE_A, PIGOU_ROUTE_B
from mobgame.scenario import bundled_path


def run(*args):
    return main([str(a) for a in args])


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def test_assign_pigou(tmp_path):
    assert run("assign", "--scenario", "pigou", "--out", tmp_path) == OK
    flows = {int(r["edge_id"]): float(r["flow"]) for r in rows(tmp_path / "flows.csv")}
    assert flows[PIGOU_ROUTE_B] == pytest.approx(100.0, abs=1.5)
    assert flows[PIGOU_ROUTE_A] == pytest.approx(50.0, abs=1.5)
    summary = json.loads((tmp_path / "assign_summary.json").read_text())
    assert summary["gap"]["converged"] and summary["seed"] == 0


def test_unreachable_request(tmp_path, capsys):
    doc = json.loads(bundled_path("pigou").read_text())
    doc["network"]["graph"]["edges"][1].update(tail=0, head=1)  # no way back from 1 to 0
    doc["demand"]["requests"].append({"class": "Leisure", "origin": 1, "destination": 0, "volume": 5.0})
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    assert run("assign", "--scenario", path, "--out", tmp_path) == INVALID
    assert "Leisure 1->0" in capsys.readouterr().err


def test_iteration_cap_gives_partial_results(tmp_path):
    assert run("assign", "--scenario", "grid", "--max-iter", 1, "--epsilon", 1e-9, "--out", tmp_path) == SOLVER
    assert rows(tmp_path / "flows.csv")
    assert not json.loads((tmp_path / "assign_summary.json").read_text())["gap"]["converged"]


def test_invalid_scenario(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"name": "x", "bogus": 1}')
    assert run("assign", "--scenario", path, "--out", tmp_path) == INVALID
    assert "bogus" in capsys.readouterr().err


def test_missing_scenario_flag(tmp_path):
    assert run("assign", "--out", tmp_path) == INVALID


def test_empty_dataset_rejected(tmp_path):
    assert run("dataset", "--scenario", "grid", "--n", 0, "--out", tmp_path) == INVALID


def test_pigou_cannot_optimize(tmp_path):
    assert run("optimize", "--scenario", "pigou", "--budget", 4, "--out", tmp_path) == INVALID


def test_surrogate_needs_model(tmp_path):
    assert run("optimize", "--scenario", "grid", "--evaluator", "surrogate", "--out", tmp_path) == INVALID


def test_feedback_and_ga_traces_comparable(tmp_path):
    assert run("optimize", "--scenario", "grid", "--method", "feedback", "--budget", 40, "--out", tmp_path) == OK
    assert run("optimize", "--scenario", "grid", "--method", "ga", "--budget", 40, "--out", tmp_path) == OK
    fb, ga = rows(tmp_path / "optimize_feedback_trace.csv"), rows(tmp_path / "optimize_ga_trace.csv")
    assert list(fb[0]) == list(ga[0])
    assert int(fb[-1]["evaluations"]) == int(ga[-1]["evaluations"]) == 40


def test_mne_and_policy_file(tmp_path):
    policy = tmp_path / "z.json"
    policy.write_text(json.dumps({"subsidy_tx": 20.0}))
    assert run("mne", "--scenario", "grid", "--policy", policy, "--out", tmp_path) == OK
    doc = json.loads((tmp_path / "mne_summary.json").read_text())
    assert doc["policy"]["subsidy_tx"] == 20.0
    assert set(doc["strategies"]) == {"pt", "tx"}


def test_policy_outside_box(tmp_path):
    policy = tmp_path / "z.json"
    policy.write_text(json.dumps({"license": 5000.0}))
    assert run("mne", "--scenario", "grid", "--policy", policy, "--out", tmp_path) == INVALID


def test_train_rejects_foreign_dataset(tmp_path):
    assert run("dataset", "--scenario", "grid", "--n", 2, "--out", tmp_path) == OK
    text = (tmp_path / "dataset.csv").read_text().replace("scenario=", "scenario=ff", 1)
    (tmp_path / "dataset.csv").write_text(text)
    assert run("train", "--scenario", "grid", "--dataset", tmp_path / "dataset.csv", "--out", tmp_path) == INVALID


def test_train_then_surrogate_optimize(tmp_path):
    assert run("dataset", "--scenario", "grid", "--n", 12, "--out", tmp_path) == OK
    assert run("train", "--dataset", tmp_path / "dataset.csv", "--out", tmp_path) == OK
    assert run("optimize", "--scenario", "grid", "--evaluator", "surrogate", "--surrogate",
               tmp_path / "surrogate.json", "--budget", 100, "--out", tmp_path) == OK
    summary = json.loads((tmp_path / "optimize_feedback_summary.json").read_text())
    assert summary["evaluator"] == "surrogate" and summary["evaluations"] == 100


def test_timing_only_when_asked(tmp_path):
    run("optimize", "--scenario", "grid", "--budget", 4, "--out", tmp_path / "a")
    run("optimize", "--scenario", "grid", "--budget", 4, "--timing", "--out", tmp_path / "b")
    assert rows(tmp_path / "a" / "optimize_feedback_trace.csv")[0]["wallclock_ms"] == ""
    assert rows(tmp_path / "b" / "optimize_feedback_trace.csv")[0]["wallclock_ms"] != ""
