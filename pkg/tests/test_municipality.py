import numpy as np
import pytest

from mobgame.municipality import (
    FlowSummary, MunicipalParams, Policy, PolicyBounds, emissions, j_components, municipal_revenue,
    optimize_policy, project_policy, social_welfare_cost, summarize,
)
from mobgame.operators import PtStrategy, TxStrategy, apply_strategies
from mobgame.zo import ZOParams
from toy import TX_RIDE, WALK, flows_on, toy_graph

UNIT_BOX = PolicyBounds(Policy(0.0, 0.0, 0.0, 0.0, 0.0), Policy(1.0, 1.0, 1.0, 1.0, 1.0))


def _priced_walk(price, time):
    g = toy_graph()
    p = np.array(g.price)
    t = np.array(g.freeflow_time)
    p[WALK], t[WALK] = price, time
    return g.with_labels(price=p, freeflow_time=t)


def test_welfare_zero_flows():
    g = toy_graph()
    assert social_welfare_cost(flows_on(g), g) == 0.0


def test_welfare_one_edge():
    g = _priced_walk(2.0, 0.5)
    assert social_welfare_cost(flows_on(g, walk=10.0), g) == pytest.approx(115.0)


def test_welfare_free_edge():
    g = _priced_walk(0.0, 0.0)
    assert social_welfare_cost(flows_on(g, walk=10.0), g) == 0.0


def test_emissions():
    g = toy_graph(taxi_km=2.0)
    assert emissions(flows_on(g), g, 0.3) == 0.0
    assert emissions(flows_on(g, tx_ride=5.0), g, 0.3) == pytest.approx(3.0)
    assert emissions(flows_on(g, pt_ride=50.0), g, 0.3) == 0.0


@pytest.mark.parametrize("z, revs, transfers, expected", [
    (Policy(), (100.0, 100.0), (3.0, 3.0), 0.0),
    (Policy(tax_tx=0.4), (0.0, 100.0), (0.0, 0.0), 40.0),
    (Policy(subsidy_tx=11.5), (0.0, 0.0), (0.0, 2.0), -23.0),
])
def test_municipal_revenue(z, revs, transfers, expected):
    assert municipal_revenue(z, revs, transfers) == pytest.approx(expected)


def _summary(sw=0.0, km=0.0, rev_tx=0.0):
    return FlowSummary(sw, km, 0.0, rev_tx, 0.0, 0.0, 0.0, 0.0)


def test_weights_select_emissions():
    params = MunicipalParams(emission_factor=0.3, weights=(0.0, 1.0, 0.0))
    j = j_components(Policy(tax_tx=0.4), _summary(115.0, 10.0, 100.0), params)
    assert j.total == pytest.approx(3.0) == pytest.approx(j.emissions)


def test_weighted_total():
    params = MunicipalParams(emission_factor=0.3, weights=(1.0, 1.0, 1.0))
    j = j_components(Policy(tax_tx=0.4), _summary(115.0, 10.0, 100.0), params)
    assert (j.welfare, j.emissions, j.revenue) == pytest.approx((115.0, 3.0, 40.0))
    assert j.total == pytest.approx(-152.0)


def test_nothing_happening_costs_nothing():
    assert j_components(Policy(), _summary(), MunicipalParams(0.5)).total == 0.0


def test_params_validated():
    with pytest.raises(ValueError):
        MunicipalParams(emission_factor=-1.0)
    with pytest.raises(ValueError):
        MunicipalParams(emission_factor=0.1, weights=(1.0, 1.0))


def test_summary_matches_direct_formulas():
    g = apply_strategies(toy_graph(), PtStrategy(), TxStrategy())
    f = flows_on(g, w_pt=4.0, pt_ride=4.0, pt_tx=1.0, w_tx=3.0, tx_ride=4.0, tx_pt=2.0)
    s = summarize(PtStrategy(), TxStrategy(), f, g)
    assert s.transfers_tx == 1.0 and s.transfers_pt == 2.0
    assert s.pt_boardings == 6.0 and s.taxi_boardings == 4.0
    assert s.taxi_km == pytest.approx(4.0 * g.distance[TX_RIDE])


def test_projection():
    z = Policy(0.1, 0.2, 300.0, 1.0, 2.0)
    assert project_policy(z) == z
    assert project_policy(Policy(tax_pt=-2.0)).tax_pt == -1.0
    assert project_policy(Policy(license=1500.0)).license == 1000.0


def test_bounds_normalization_round_trip():
    b = PolicyBounds()
    z = Policy(0.1, 0.2, 300.0, 1.0, 2.0)
    back = b.denormalize(b.normalize(z)).as_array()
    assert back == pytest.approx(z.as_array())
    with pytest.raises(ValueError):
        PolicyBounds(Policy(license=5.0), Policy(license=5.0))


def _quadratic(target):
    t = np.asarray(target, dtype=float)
    return lambda z: float(np.sum((z.as_array() - t) ** 2))


def test_interior_optimum_found():
    target = [0.3, 0.6, 0.5, 0.2, 0.7]
    dists = []
    for seed in range(10):
        res = optimize_policy(_quadratic(target), UNIT_BOX.denormalize(np.full(5, 0.5)),
                              ZOParams(eta=0.2, delta=0.01, iterations=300, seed=seed), UNIT_BOX)
        dists.append(np.linalg.norm(res.best.as_array() - target))
    assert np.mean(dists) < 0.1


def test_exterior_optimum_lands_on_face():
    target = np.array([0.5, 0.5, 1.6, 0.5, 0.5])
    finals = np.array([
        optimize_policy(_quadratic(target), UNIT_BOX.denormalize(np.full(5, 0.5)),
                        ZOParams(eta=0.05, delta=0.01, iterations=300, seed=seed), UNIT_BOX).final.as_array()
        for seed in range(10)
    ])
    assert np.median(finals[:, 2]) == pytest.approx(1.0, abs=0.01)
    assert np.delete(finals.mean(axis=0), 2) == pytest.approx(0.5, abs=0.06)


def test_constant_evaluator_keeps_best_constant():
    res = optimize_policy(lambda z: 7.0, Policy(), ZOParams(eta=0.2, iterations=30), budget=60)
    bests = [s.j_best for s in res.trace]
    assert set(bests) == {7.0}
    assert res.evaluations == 60


def test_best_so_far_is_monotone():
    res = optimize_policy(_quadratic([0.1] * 5), UNIT_BOX.denormalize(np.full(5, 0.9)),
                          ZOParams(eta=0.1, iterations=50, seed=3), UNIT_BOX)
    bests = [s.j_best for s in res.trace]
    assert all(b <= a for a, b in zip(bests, bests[1:]))


def test_budget_limits_steps():
    res = optimize_policy(lambda z: 0.0, Policy(), ZOParams(iterations=100), budget=11)
    assert res.evaluations == 10 and len(res.trace) == 5


def test_initial_policy_must_be_feasible():
    with pytest.raises(ValueError):
        optimize_policy(lambda z: 0.0, Policy(license=2000.0), ZOParams())


def test_objective_scale_only_changes_step():
    f = _quadratic([0.2] * 5)
    z0 = UNIT_BOX.denormalize(np.full(5, 0.5))
    a = optimize_policy(f, z0, ZOParams(eta=0.1, iterations=5), UNIT_BOX)
    b = optimize_policy(lambda z: 10 * f(z), z0, ZOParams(eta=0.1, iterations=5), UNIT_BOX, objective_scale=10.0)
    assert b.final.as_array() == pytest.approx(a.final.as_array())
    assert b.best_value == pytest.approx(10 * a.best_value)


def test_quadratic_best_value_near_minimum():
    target = [0.3, 0.6, 0.5, 0.2, 0.7]
    vals = [optimize_policy(_quadratic(target), UNIT_BOX.denormalize(np.full(5, 0.5)),
                            ZOParams(eta=0.2, delta=0.01, iterations=300, seed=s), UNIT_BOX).best_value
            for s in range(10)]
    assert np.median(vals) < 1e-2


def test_iterates_stay_in_box():
    res = optimize_policy(_quadratic([2.0, -1.0, 0.5, 3.0, 0.5]), UNIT_BOX.denormalize(np.full(5, 0.5)),
                          ZOParams(eta=0.5, iterations=60, seed=1), UNIT_BOX)
    assert all(UNIT_BOX.contains(s.z) and UNIT_BOX.contains(s.z_next) for s in res.trace)


@pytest.mark.parametrize("weights, pick", [((1.0, 0.0, 0.0), "welfare"), ((0.0, 0.0, 1.0), "revenue")])
def test_weight_isolation(weights, pick):
    j = j_components(Policy(tax_tx=0.4), _summary(115.0, 10.0, 100.0), MunicipalParams(0.3, weights))
    assert j.total == -getattr(j, pick)
