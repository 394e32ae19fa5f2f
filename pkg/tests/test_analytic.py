import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import asymmetric_params
from infobroker import analytic, lp_oracle
from infobroker.analytic import (StepFunction, optimal_threshold_x_star, payments_from_envelope,
                                 reported_threshold_x_star, solve_no_obedience, solve_no_privacy,
                                 solve_privacy_duopoly, solve_symmetric_two_consumer_no_obedience,
                                 solve_three_consumers, threshold_mechanism, threshold_shape,
                                 threshold_x_double_star)
from infobroker.lp_oracle import ScenarioSpec
from infobroker.model import (InvalidInput, MarketParams, Population, Signal, audit_mechanism,
                              broker_revenue, x_lower)


def closed_revenue(p, x):
    """Revenue of the threshold mechanism on the uniform line, integrated by hand."""
    return p.V - p.t + p.t * x - p.t * x * x


# -- thresholds ----------------------------------------------------------------------

@pytest.mark.parametrize("H,L,t,xs", [(10, 9, 1, 8 / 9), (10, 8, 2, 0.75), (10, 2, 5, 0.5),
                                      (10, 5, 1, 1.0)])
def test_x_star_values(H, L, t, xs):
    assert optimal_threshold_x_star(MarketParams.asymmetric(1000, t, H, L)) == pytest.approx(xs)


def test_reported_formula_kept_for_comparison(base_params):
    assert reported_threshold_x_star(base_params) == pytest.approx(17 / 18)


def test_x_star_makes_seller1_indifferent(base_params):
    # x_lower H = (x_lower + (1 - x*)/2) L: the (H,L) mass above x* is (1 - x*)/2
    p, xs, xl = base_params, optimal_threshold_x_star(base_params), x_lower(base_params)
    assert xl * p.H == pytest.approx((xl + (1 - xs) / 2) * p.L)


@pytest.mark.parametrize("t,expected", [(1, 0.5), (2, 0.75), (0.75, 0.5), (10, 0.95)])
def test_x_double_star_kink(t, expected):
    assert threshold_x_double_star(MarketParams.asymmetric(1000, t, 10, 9)) == pytest.approx(expected)


@given(p=asymmetric_params())
def test_threshold_ordering(p):
    xl = x_lower(p)
    assert xl - 1e-12 <= threshold_x_double_star(p) <= optimal_threshold_x_star(p) + 1e-12 <= 1 + 2e-12


# -- continuum mechanisms ------------------------------------------------------------

def test_duopoly_revenue(base_params):
    duo = solve_privacy_duopoly(base_params)
    assert duo.revenue() == pytest.approx(closed_revenue(base_params, 8 / 9), abs=1e-9)
    assert duo.revenue() == pytest.approx(999.098765432, abs=1e-8)


@given(p=asymmetric_params())
def test_revenue_integral_matches_hand_formula(p):
    for mech in (solve_privacy_duopoly(p), solve_no_obedience(p)):
        assert mech.revenue() == pytest.approx(closed_revenue(p, mech.x_star), abs=1e-7)


def test_no_privacy_revenue_is_first_best(base_params):
    full = solve_no_privacy(base_params, Population.uniform_line())
    assert full.revenue() == pytest.approx(base_params.V - base_params.t / 2, abs=1e-9)


@given(p=asymmetric_params())
def test_revenue_ordering(p):
    duo, noob = solve_privacy_duopoly(p), solve_no_obedience(p)
    full = solve_no_privacy(p, Population.uniform_line())
    assert full.revenue() >= noob.revenue() - 1e-9 >= duo.revenue() - 2e-9


def test_scheme_shape(base_params):
    duo = solve_privacy_duopoly(base_params)
    assert duo.scheme_at(0.3)[Signal.HH] == 1.0
    assert duo.scheme_at(0.7)[Signal.LL] == 1.0
    assert duo.scheme_at(0.95)[[Signal.HL, Signal.LL]] == pytest.approx([0.5, 0.5])


def test_payoff_profile(base_params):
    # G(x) = (x* - x) t on [x_lower, x*], zero above
    duo = solve_privacy_duopoly(base_params)
    for x in (0.55, 0.7, 0.85):
        assert duo.consumer_payoff(x) == pytest.approx((duo.x_star - x) * base_params.t, abs=1e-12)
    for x in (0.9, 0.95, 1.0):
        assert duo.consumer_payoff(x) == pytest.approx(0.0, abs=1e-12)
    assert duo.consumer_payoff(0.2) > duo.consumer_payoff(0.5) > 0


@given(p=asymmetric_params(), seed=st.integers(0, 1000))
def test_envelope_derivative(p, seed):
    duo = solve_privacy_duopoly(p)
    rng = np.random.default_rng(seed)
    h = 1e-4
    kinks = [duo.x_lower, duo.x_star]
    for x in rng.uniform(duo.x_lower, 1.0, 20):
        if min(abs(x - k) for k in kinks) < 2 * h or x + h > 1:
            continue
        fd = (duo.consumer_payoff(x + h) - duo.consumer_payoff(x - h)) / (2 * h)
        assert fd == pytest.approx((1 - 2 * duo.y(x)) * p.t, abs=1e-6)


def test_envelope_for_general_step(base_params):
    y = StepFunction(np.array([0.5, 0.6, 0.8, 1.0]), np.array([1.0, 0.7, 0.5]))
    fees = payments_from_envelope(y, base_params, 0.5)
    assert fees.payoff(1.0) == pytest.approx(0.0)
    # G(x) = integral_x^1 (2y - 1) t
    assert fees.payoff(0.5) == pytest.approx(1.0 * 0.1 + 0.4 * 0.2 + 0.0 * 0.2)
    assert fees(0.7) == pytest.approx(fees.utility(0.7) - fees.payoff(0.7))


def test_threshold_shape_and_validation(base_params):
    y = threshold_shape(0.5, 0.8)
    assert (y(0.6), y(0.9)) == (1.0, 0.5)
    with pytest.raises(InvalidInput):
        threshold_mechanism(base_params, 0.3)
    with pytest.raises(InvalidInput):
        solve_privacy_duopoly(MarketParams.symmetric(1000, 1, 10, 9))


@given(p=asymmetric_params(), x=st.floats(0.0, 0.2))
def test_efficiency_loss_falls_with_threshold(p, x):
    from infobroker import welfare
    xl = x_lower(p)
    a = xl + x * (1 - xl)
    b = min(1.0, a + 0.1)
    sc = ScenarioSpec(p, Population.uniform_line())
    la = welfare.report(threshold_mechanism(p, a), sc).efficiency_loss
    lb = welfare.report(threshold_mechanism(p, b), sc).efficiency_loss
    assert lb <= la + 1e-9


# -- grid versions -------------------------------------------------------------------

@pytest.mark.parametrize("N,expected", [(10, 999.1422222222), (25, 999.1162666667),
                                        (50, 999.1075555556)])
def test_grid_revenue_matches_oracle_values(base_params, N, expected):
    assert solve_privacy_duopoly(base_params).grid_revenue(N) == pytest.approx(expected, abs=1e-8)


def test_grid_revenue_converges(base_params):
    duo = solve_privacy_duopoly(base_params)
    gaps = [abs(duo.grid_revenue(N) - duo.revenue()) for N in (10, 40, 160)]
    assert gaps[0] > gaps[1] > gaps[2]


@settings(max_examples=15)
@given(p=asymmetric_params(), N=st.integers(6, 16))
def test_grid_mechanism_feasible_and_near_lp(p, N):
    sc = ScenarioSpec(p, Population.uniform_line(), grid=N)
    duo = solve_privacy_duopoly(p)
    types = sc.types()
    edges = np.concatenate([[0.0], np.cumsum(types.masses)])
    edges[-1] = 1.0
    types, mech = duo.on_population(types, edges)
    assert audit_mechanism(mech, types, p, tol=1e-7 * p.V).feasible
    gap = lp_oracle.solve(sc).revenue - broker_revenue(mech, types)
    assert -1e-7 <= gap <= p.t / N


def test_analytic_structure_passes(base_params):
    assert analytic.analytic_structure(solve_privacy_duopoly(base_params), 50).passed


# -- three consumers -----------------------------------------------------------------

def test_three_consumer_branch_tree(base_params):
    sol = solve_three_consumers(base_params, 3 / 8, 4 / 6, 5 / 6, [0.9, 0.05, 0.05])
    assert sol.y2 == pytest.approx(0.125) and sol.y3 == pytest.approx(0.125)
    assert sol.binding_ir == "x2"
    assert sol.revenue == pytest.approx(999.5375)


def test_three_consumer_branch_with_full_ll(base_params):
    sol = solve_three_consumers(base_params, 0.3, 0.6, 0.8, [0.05, 0.05, 0.9])
    assert sol.binding_case == "A1.1"
    assert (sol.y2, sol.y3) == pytest.approx((1.0, 1.0))
    lp = lp_oracle.solve(ScenarioSpec(base_params, Population.discrete([0.3, 0.6, 0.8], [0.05, 0.05, 0.9])))
    assert sol.revenue == pytest.approx(lp.revenue, abs=1e-6) == pytest.approx(999.2)


@settings(max_examples=20)
@given(x1=st.floats(0.05, 0.45), x2=st.floats(0.52, 0.7), x3=st.floats(0.72, 0.98),
       w=st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3))
def test_three_consumer_tree_never_beats_lp(x1, x2, x3, w):
    p = MarketParams.asymmetric(1000, 1, 10, 9)
    lam = np.array(w) / sum(w)
    sol = solve_three_consumers(p, x1, x2, x3, lam)
    pop = Population.discrete([x1, x2, x3], lam)
    assert audit_mechanism(sol.mechanism, pop, p, tol=1e-7 * p.V).feasible
    lp = lp_oracle.solve(ScenarioSpec(p, pop))
    assert sol.revenue <= lp.revenue + 1e-7


def test_three_consumer_tree_suboptimal_branch():
    # the (1, y3) branch leaves revenue on the table here; the LP pools y2 = y3
    p = MarketParams.asymmetric(1000, 1, 10, 9)
    xs = [0.24713879156973306, 0.6729028740141166, 0.9709601694177177]
    lam = [0.66211777, 0.02791774, 0.30996449]
    sol = solve_three_consumers(p, *xs, lam)
    lp = lp_oracle.solve(ScenarioSpec(p, Population.discrete(xs, np.array(lam) / sum(lam))))
    assert sol.binding_case == "A2.2.1" and sol.y2 == 1.0
    assert lp.y()[1] == pytest.approx(lp.y()[2], abs=1e-9)
    assert lp.revenue - sol.revenue > 0.03


def test_three_consumer_preconditions(base_params):
    with pytest.raises(InvalidInput):
        solve_three_consumers(base_params, 0.6, 0.7, 0.8, [0.3, 0.3, 0.4])


# -- symmetric two consumers ---------------------------------------------------------

def test_symmetric_full_extraction():
    p = MarketParams.symmetric(10000, 18, 10, 1)
    pop = Population.discrete([3 / 8, 9 / 16], [0.95, 0.05])
    mech = solve_symmetric_two_consumer_no_obedience(p, 3 / 8, 9 / 16, pop.masses)
    assert broker_revenue(mech, pop) == pytest.approx(0.95 * 9993.25 + 0.05 * 9992.125, abs=1e-9)
    assert audit_mechanism(mech, pop, p, obedience=False).feasible
    assert mech.scheme[1, Signal.HL] == pytest.approx((1 - 3 / 8 - 9 / 16) / (1 - 3 / 4))


def test_symmetric_pair_gets_pure_ll():
    p = MarketParams.symmetric(10000, 18, 10, 1)
    mech = solve_symmetric_two_consumer_no_obedience(p, 0.4, 0.6, [0.5, 0.5])
    assert mech.scheme[:, Signal.LL] == pytest.approx([1.0, 1.0])


@given(x1=st.floats(0.26, 0.49), x2=st.floats(0.51, 0.74), w=st.floats(0.05, 0.95))
def test_symmetric_closed_form_matches_lp(x1, x2, w):
    if x1 > 1 - x2:
        return
    p = MarketParams.symmetric(10000, 18, 10, 1)
    pop = Population.discrete([x1, x2], [w, 1 - w])
    mech = solve_symmetric_two_consumer_no_obedience(p, x1, x2, pop.masses)
    lp = lp_oracle.solve(ScenarioSpec(p, pop, obedience=False))
    assert broker_revenue(mech, pop) == pytest.approx(lp.revenue, abs=1e-6)
    assert audit_mechanism(mech, pop, p, obedience=False, tol=1e-6).feasible
