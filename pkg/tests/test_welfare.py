import numpy as np
import pytest
from hypothesis import given, settings

from conftest import asymmetric_params, discrete_population
from infobroker.analytic import (optimal_threshold_x_star, solve_no_obedience, solve_no_privacy,
                                 solve_privacy_duopoly)
from infobroker.lp_oracle import ScenarioSpec, solve
from infobroker.model import MarketParams, Population
from infobroker.welfare import OrderingViolation, compare, first_best_surplus, report

UNIFORM = Population.uniform_line()


def test_first_best_values(base_params):
    assert first_best_surplus(ScenarioSpec(base_params, UNIFORM)) == pytest.approx(999.5)
    sym = MarketParams.symmetric(1000, 2, 10, 9)
    assert first_best_surplus(ScenarioSpec(sym, UNIFORM)) == pytest.approx(999.5)
    pop = Population.discrete([0.2, 0.9], [0.25, 0.75])
    assert first_best_surplus(ScenarioSpec(base_params, pop)) == pytest.approx(1000 - 0.25 * 0.2 - 0.75 * 0.9)
    # symmetric: each type travels to the nearer seller
    assert first_best_surplus(ScenarioSpec(sym, pop)) == pytest.approx(1000 - 0.25 * 0.4 - 0.75 * 0.2)


@settings(max_examples=20)
@given(p=asymmetric_params(), pop=discrete_population())
def test_accounting_identity_on_lp_optimum(p, pop):
    for sc in (ScenarioSpec(p, pop), ScenarioSpec(p, pop, obedience=False)):
        res = solve(sc)
        rep = report(res.mechanism, sc)
        assert abs(rep.accounting_gap()) <= 1e-7 * p.V1
        assert rep.efficiency_loss >= -1e-9
        assert rep.broker_revenue == pytest.approx(res.revenue, abs=1e-9)


@pytest.mark.parametrize("solver", [solve_privacy_duopoly, solve_no_obedience])
def test_continuum_accounting(base_params, solver):
    mech = solver(base_params)
    rep = report(mech, ScenarioSpec(base_params, UNIFORM))
    assert abs(rep.accounting_gap()) <= 1e-8
    assert rep.first_best == pytest.approx(999.5)


def test_continuum_and_grid_reports_agree(base_params):
    mech = solve_privacy_duopoly(base_params)
    sc = ScenarioSpec(base_params, UNIFORM, grid=400)
    cont = report(mech, sc)
    types, grid_mech = mech.on_grid(400)
    disc = report(grid_mech, sc)
    assert disc.broker_revenue == pytest.approx(cont.broker_revenue, abs=2 * base_params.t / 400)
    assert disc.efficiency_loss == pytest.approx(cont.efficiency_loss, abs=2 * base_params.t / 400)


def test_no_privacy_is_efficient(base_params):
    for pop in (UNIFORM, Population.discrete([0.2, 0.7], [0.5, 0.5])):
        sc = ScenarioSpec(base_params, pop, consumer_ic=False, obedience=False)
        rep = report(solve_no_privacy(base_params, pop), sc)
        assert rep.efficiency_loss == pytest.approx(0.0, abs=1e-9)
        assert rep.broker_revenue == pytest.approx(first_best_surplus(sc), abs=1e-8)


@pytest.mark.parametrize("L", [5.0, 8.0, 9.0, 9.5])
def test_orderings_hold(L):
    p = MarketParams.asymmetric(1000, 1, 10, L)
    sc = ScenarioSpec(p, UNIFORM)
    reps = [report(solve_no_privacy(p, UNIFORM), sc.replace(consumer_ic=False, obedience=False)),
            report(solve_privacy_duopoly(p), sc), report(solve_no_obedience(p), sc)]
    out = compare(["no_privacy", "duopoly", "no_obedience"], reps)
    assert [r["scenario"] for r in out["rows"]] == ["no_privacy", "duopoly", "no_obedience"]
    assert len(out["deltas"]) == 3


def test_swapped_reports_raise(base_params):
    sc = ScenarioSpec(base_params, UNIFORM)
    duo, nob = report(solve_privacy_duopoly(base_params), sc), report(solve_no_obedience(base_params), sc)
    assert duo.broker_revenue < nob.broker_revenue
    with pytest.raises(OrderingViolation):
        compare(["duopoly", "no_obedience"], [nob, duo])


def test_rent_positive_below_threshold(base_params):
    # rent is left to every type short of the threshold, not only to the first segment
    mech = solve_privacy_duopoly(base_params)
    xs_ = optimal_threshold_x_star(base_params)
    below = np.linspace(0, xs_ - 1e-3, 50)
    above = np.linspace(xs_, 1, 20)
    assert all(mech.consumer_payoff(x) > 0 for x in below)
    assert all(abs(mech.consumer_payoff(x)) <= 1e-12 for x in above)
    assert mech.consumer_payoff(0.7) > 0 and 0.7 > mech.x_lower


def test_rent_profile_on_lp_grid(base_params):
    sc = ScenarioSpec(base_params, UNIFORM, grid=20)
    res = solve(sc)
    rep = report(res.mechanism, sc)
    xs = res.types.locations
    xs_ = optimal_threshold_x_star(base_params)
    rents = rep.information_rent_by_type
    assert np.all(rents[xs < 0.5] > 1e-6)
    assert np.all(np.abs(rents[xs > xs_ + 0.05]) <= 1e-7)
    assert np.all(np.diff(rents) <= 1e-9)
