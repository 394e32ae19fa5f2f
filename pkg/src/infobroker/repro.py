"""Canonical reproductions: reported values next to closed forms and the LP oracle."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import analytic, lp_oracle
from .files import fmt
from .lp_oracle import ScenarioSpec
from .model import (MarketParams, Mechanism, Population, audit_mechanism, broker_revenue,
                    obedience_coefficients, obedience_slack,
                    seller_expected_revenue, signal_tables, x_lower)

TARGETS = ("example1", "table1", "theorem1", "prop2", "prop3")

REPORTED_Y = 0.234
TABLE1_JOINT = np.array([[0.00854, 0.07595, 0.05831, 0.80719],
                         [0.00095, 0.01250, 0.00000, 0.03655]])
GRIDS = (10, 25, 50)


@dataclass
class Repro:
    target: str
    lines: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)

    def say(self, label: str, *values) -> None:
        text = "  ".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in values)
        self.lines.append(f"{label:<40s}{text}")

    def check(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks[name] = bool(ok)
        self.lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f"  ({detail})" if detail else ""))

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def text(self) -> str:
        return "\n".join([f"== {self.target} ==", *self.lines,
                          f"result: {'PASS' if self.passed else 'FAIL'}"])


# -- canonical scenarios -------------------------------------------------------------

def example1_scenario() -> ScenarioSpec:
    return ScenarioSpec(MarketParams.asymmetric(1000, 1, 10, 9),
                        Population.discrete([3 / 8, 4 / 6, 5 / 6], [0.9, 0.05, 0.05]))


def example2_scenario(obedience: bool = True) -> ScenarioSpec:
    return ScenarioSpec(MarketParams.symmetric(10000, 18, 10, 1),
                        Population.discrete([3 / 8, 9 / 16], [0.95, 0.05]), obedience=obedience)


def uniform_scenario(N: int = 50, obedience: bool = True) -> ScenarioSpec:
    return ScenarioSpec(MarketParams.asymmetric(1000, 1, 10, 9), Population.uniform_line(),
                        obedience=obedience, grid=N)


def table1_point(sc: ScenarioSpec) -> Mechanism:
    """Table masses as conditional probabilities, fees maximal given the scheme."""
    joint = TABLE1_JOINT
    pi = joint / joint.sum(axis=1, keepdims=True)
    types, p = sc.types(), sc.params
    u, _, _, _ = signal_tables(types.locations, p)
    fees, ok = lp_oracle.max_fees(u, pi)
    if not ok:
        raise ValueError("table scheme admits no IC fee schedule")
    draft = Mechanism(pi, fees, (0.0, 0.0))
    m = (seller_expected_revenue(1, draft, types, p), seller_expected_revenue(2, draft, types, p))
    return Mechanism(pi, fees, m)


# -- targets -------------------------------------------------------------------------

def example1() -> Repro:
    out = Repro("example1")
    sc = example1_scenario()
    start = time.perf_counter()
    res = lp_oracle.solve(sc)
    seconds = time.perf_counter() - start
    y = res.y()
    x = sc.population.locations
    tree = analytic.solve_three_consumers(sc.params, *x, sc.population.masses)
    ir2, ir3 = res.binding.slack("consumerIR", 2), res.binding.slack("consumerIR", 3)
    out.values.update(y2=y[1], y3=y[2], tree_y=tree.y2, ir2=ir2, ir3=ir3, revenue=res.revenue)
    out.say("reported y2 = y3", REPORTED_Y)
    out.say(f"branch tree ({tree.binding_case})", float(tree.y2), float(tree.y3))
    out.say("LP oracle y2, y3", float(y[1]), float(y[2]))
    out.say("LP revenue / tree revenue", res.revenue, float(tree.revenue))
    out.say("x2-IR slack, x3-IR slack", float(ir2), float(ir3))
    out.say("solve seconds", seconds)
    out.check("y2 = y3 (1e-6)", abs(y[1] - y[2]) <= 1e-6, f"|diff| {abs(y[1] - y[2]):.2e}")
    out.check("x2-IR binds (slack <= 1e-7)", ir2 <= 1e-7)
    out.check("x3-IR slack (> 1e-4)", ir3 > 1e-4)
    agree = abs(tree.y2 - y[1]) <= 1e-6 and abs(tree.y3 - y[2]) <= 1e-6
    if agree:
        out.lines.append("branch tree and LP oracle agree within 1e-6")
    else:
        out.lines.append("discrepancy: branch tree differs from the oracle; the oracle is ground truth")
    if abs(REPORTED_Y - y[1]) > 1e-3:
        out.lines.append(f"note: reported value {REPORTED_Y} is not reproduced "
                         f"(oracle {fmt(y[1])}); informational only")
    return out


def table1() -> Repro:
    out = Repro("table1")
    sc = example2_scenario()
    start = time.perf_counter()
    res = lp_oracle.solve(sc)
    seconds = time.perf_counter() - start
    point = table1_point(sc)
    types = sc.types()
    obj = broker_revenue(point, types)
    audit = audit_mechanism(point, types, sc.params, tol=1e-6)
    worst = min(audit.slacks.items(), key=lambda kv: kv[1])
    joint_lp = res.mechanism.scheme * types.masses[:, None]
    pointwise = float(np.max(np.abs(joint_lp - TABLE1_JOINT)))
    out.values.update(lp_objective=res.revenue, table_objective=obj,
                      min_slack=audit.min_slack, pointwise=pointwise)
    out.say("LP objective", res.revenue)
    out.say("table point objective", obj)
    out.say("table point min slack", audit.min_slack, f"at {worst[0][0]} {worst[0][1]}")
    out.say("LP joint masses x1", *[float(v) for v in joint_lp[0]])
    out.say("LP joint masses x2", *[float(v) for v in joint_lp[1]])
    out.say("max |LP - table| mass", pointwise)
    out.say("solve seconds", seconds)
    # joint masses are printed to 5 decimals, so each may be off by 5e-6
    k, hi, lo = min(lp_oracle.OBEDIENCE_PAIRS, key=lambda q: obedience_slack(
        q[0], q[1], q[2], point, types, sc.params))
    coef = obedience_coefficients(k, sc.params.price(hi), sc.params.price(lo),
                                  types.locations, sc.params)
    rounding = 5e-6 * float(np.abs(coef).sum())
    out.say("rounding sensitivity of that row", rounding)
    out.check("objective match (1e-3)", abs(res.revenue - obj) <= 1e-3,
              f"|diff| {abs(res.revenue - obj):.2e}")
    out.check("table point audits feasible (slack >= -1e-6)", audit.min_slack >= -1e-6)
    if pointwise <= 1e-3:
        out.lines.append("LP vertex coincides with the table within 1e-3")
    else:
        out.lines.append("LP returns an alternative optimum (same objective, different vertex)")
    return out


def theorem1() -> Repro:
    out = Repro("theorem1")
    p = MarketParams.asymmetric(1000, 1, 10, 9)
    mech = analytic.solve_privacy_duopoly(p)
    out.say("x_lower", x_lower(p))
    out.say("x* (reported formula)", analytic.reported_threshold_x_star(p))
    out.say("x* (obedience-binding)", mech.x_star)
    out.say("continuum revenue", mech.revenue())
    gaps, last = [], None
    start = time.perf_counter()
    for N in GRIDS:
        res = lp_oracle.solve(uniform_scenario(N))
        ana = mech.grid_revenue(N)
        gaps.append(abs(res.revenue - ana))
        out.say(f"N={N} LP / analytic / gap", res.revenue, ana, gaps[-1])
        last = res
    seconds = time.perf_counter() - start
    out.say("solve seconds (all grids)", seconds)
    out.values.update(gaps=gaps)
    t = p.t
    out.check("gap at N=50 <= 1e-3 t", gaps[-1] <= 1e-3 * t)
    out.check("gap non-increasing in N", all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:])))
    rep = analytic.check_structure(last, tol=1e-6)
    for name, (ok, detail) in rep.checks.items():
        out.check(f"LP structure {name}", ok, detail)
    rep_a = analytic.analytic_structure(mech, 50)
    out.check("analytic grid structure (a)-(e)", rep_a.passed)
    return out


def prop2() -> Repro:
    out = Repro("prop2")
    p = MarketParams.asymmetric(1000, 1, 10, 9)
    duo, noob = analytic.solve_privacy_duopoly(p), analytic.solve_no_obedience(p)
    xl, xs, xss = x_lower(p), duo.x_star, noob.x_star
    out.say("x_lower, x**, x*", xl, xss, xs)
    out.say("continuum revenue no-ob / duopoly", noob.revenue(), duo.revenue())
    out.say("boundary rent no-ob / duopoly", noob.information_rent, duo.information_rent)
    out.check("x_lower <= x** <= x*", xl - 1e-12 <= xss <= xs + 1e-12)
    out.check("no-ob revenue >= duopoly revenue", noob.revenue() >= duo.revenue() - 1e-9)
    out.check("duopoly rent >= no-ob rent", duo.information_rent >= noob.information_rent - 1e-9)
    gaps = []
    for N in GRIDS:
        lp_noob = lp_oracle.solve(uniform_scenario(N, obedience=False)).revenue
        lp_duo = lp_oracle.solve(uniform_scenario(N)).revenue
        ana = noob.grid_revenue(N)
        gaps.append(lp_noob - ana)
        out.say(f"N={N} LP no-ob / analytic / LP duopoly", lp_noob, ana, lp_duo)
        out.check(f"N={N} LP no-ob >= LP duopoly", lp_noob >= lp_duo - 1e-9)
    out.values.update(gaps=gaps)
    out.check("LP no-ob minus analytic in [0, t/N]",
              all(-1e-9 <= g <= p.t / N for g, N in zip(gaps, GRIDS)),
              ", ".join(f"{g:.3g}" for g in gaps))
    out.check("that gap non-increasing in N", all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:])))
    return out


def prop3() -> Repro:
    out = Repro("prop3")
    sc = example2_scenario(obedience=False)
    p, pop = sc.params, sc.population
    (x1, x2), (l1, l2) = pop.locations, pop.masses
    formula = l1 * (p.V - p.t * x1) + l2 * (p.V - p.t * (1 - x2))
    res = lp_oracle.solve(sc)
    on = lp_oracle.solve(sc.replace(obedience=True))
    mech = analytic.solve_symmetric_two_consumer_no_obedience(p, x1, x2, pop.masses)
    ana = broker_revenue(mech, pop)
    audit = audit_mechanism(mech, pop, p, obedience=False, tol=1e-7 * p.V)
    irs = [res.binding.get("consumerIR", i) for i in (1, 2)]
    out.values.update(formula=formula, lp=res.revenue, lp_obedience=on.revenue, analytic=ana)
    out.say("full surplus formula", formula)
    out.say("closed form revenue", ana)
    out.say("LP revenue (obedience off)", res.revenue)
    out.say("LP revenue (obedience on)", on.revenue)
    out.check("LP equals full surplus (1e-6)", abs(res.revenue - formula) <= 1e-6,
              f"|diff| {abs(res.revenue - formula):.2e}")
    out.check("both consumer IRs bind", all(r.binding for r in irs))
    out.check("closed form audits feasible and matches", audit.feasible and abs(ana - formula) <= 1e-6)
    out.check("obedience lowers revenue", on.revenue < res.revenue - 1e-6,
              f"drop {res.revenue - on.revenue:.6g}")
    return out


def run(target: str) -> Repro:
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}")
    return globals()[target]()
