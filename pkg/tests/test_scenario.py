import copy
import json

import pytest

from mobgame.network import ScenarioError
from mobgame.scenario import BUNDLED, bundled_path, canonical_json, load_scenario, scenario_digest, scenario_from_dict


def _doc(name):
    return json.loads(bundled_path(name).read_text())


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_load(name):
    sc = load_scenario(name)
    assert sc.name == name
    assert sc.digest == scenario_digest(_doc(name))


def test_grid_has_all_sections():
    sc = load_scenario("grid")
    assert sc.require_operators() and sc.require_policy()
    assert sc.demand.total == pytest.approx(800.0)


def test_pigou_has_no_operators():
    sc = load_scenario("pigou")
    with pytest.raises(ScenarioError):
        sc.require_operators()
    with pytest.raises(ScenarioError):
        sc.require_policy()


def test_digest_ignores_key_order():
    doc = _doc("grid")
    shuffled = dict(reversed(list(doc.items())))
    assert scenario_digest(shuffled) == scenario_digest(doc)
    assert canonical_json(shuffled) == canonical_json(doc)


def test_digest_tracks_content():
    doc = _doc("grid")
    other = copy.deepcopy(doc)
    other["solvers"]["budget"] = 601
    assert scenario_digest(other) != scenario_digest(doc)


def test_all_problems_reported_together():
    doc = _doc("grid")
    doc["bogus"] = 1
    doc["solvers"]["ue"]["epsilon"] = -1.0
    doc["policy"]["initial"]["license"] = 5000.0
    doc["demand"]["requests"][0]["origin"] = 999
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(doc)
    text = "\n".join(map(str, err.value.violations))
    for fragment in ("bogus", "epsilon", "policy", "999"):
        assert fragment in text


def test_policy_needs_emission_factor():
    doc = _doc("grid")
    del doc["policy"]["emission_factor"]
    with pytest.raises(ScenarioError, match="emission"):
        scenario_from_dict(doc)


def test_infeasible_initial_strategy_rejected():
    doc = _doc("grid")
    doc["operators"]["initial"]["pt"]["transfer_fare"] = 9.0
    with pytest.raises(ScenarioError, match="operators.initial"):
        scenario_from_dict(doc)


def test_missing_file():
    with pytest.raises(ScenarioError, match="cannot read"):
        load_scenario("/nonexistent/scenario.json")


def test_game_overrides():
    sc = load_scenario("grid")
    assert sc.game(fleet_scale=10.0).fleet_scale == 10.0
    assert sc.game().objective_scale == sc.solvers.mne_objective_scale
