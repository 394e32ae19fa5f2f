"""Welfare accounting for broker mechanisms and comparisons across scenarios."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import integrate

from .analytic import FullExtraction, ThresholdMechanism
from .model import (InvalidInput, MarketParams, Mechanism, Population, audit_mechanism,
                    broker_revenue, consumer_utilities, seller_expected_revenue,
                    signal_tables)


class OrderingViolation(AssertionError):
    """A welfare ordering that must hold across scenarios does not."""


@dataclass(frozen=True)
class WelfareReport:
    broker_revenue: float
    consumer_surplus_total: float
    information_rent_by_type: np.ndarray
    seller_profits: tuple
    transport_cost: float
    total_welfare: float
    efficiency_loss: float
    first_best: float
    first_best_kind: str

    def accounting_gap(self) -> float:
        return self.total_welfare - (self.broker_revenue + self.consumer_surplus_total
                                     + sum(self.seller_profits))

    def as_row(self) -> dict:
        return dict(revenue=self.broker_revenue, rent_total=self.consumer_surplus_total,
                    seller_profit_1=self.seller_profits[0], seller_profit_2=self.seller_profits[1],
                    transport_cost=self.transport_cost, total_welfare=self.total_welfare,
                    efficiency_loss=self.efficiency_loss)


def _first_best_per_type(xs, params: MarketParams):
    s1 = params.V1 - xs * params.t
    if params.is_asymmetric:
        return s1
    return np.maximum(s1, params.V2 - (1 - xs) * params.t)


def first_best_surplus(scenario) -> float:
    """Sum of lambda(x)(V1 - x t); nearest-seller surplus in the symmetric model."""
    params = scenario.params
    pop = scenario.population
    if pop.uniform:
        if params.is_asymmetric:
            return params.V1 - params.t / 2
        return params.V1 - params.t / 4
    return float(pop.masses @ _first_best_per_type(pop.locations, params))


def _kind(params: MarketParams) -> str:
    return "all-buy-from-S1" if params.is_asymmetric else "nearest-seller"


def report(mech, scenario, check: bool = True) -> WelfareReport:
    """Replay purchases for every (type, signal) cell and add up the pieces.

    ``mech`` is either a discrete Mechanism on the scenario's (discretised)
    types or a closed-form continuum mechanism, which is integrated directly.
    """
    if isinstance(mech, (ThresholdMechanism, FullExtraction)):
        return _continuum_report(mech, scenario)
    params = scenario.params
    types: Population = scenario.types()
    if check:
        audit = audit_mechanism(mech, types, params, consumer_ic=scenario.consumer_ic,
                                obedience=scenario.obedience, fee_nonneg=scenario.fee_nonneg,
                                tol=1e-7 * max(1.0, params.V1))
        if not audit.feasible:
            v = audit.violations[0]
            raise InvalidInput(f"mechanism infeasible: {v.family} {v.label} slack {v.slack:.3g}")
    xs, lam = types.locations, types.masses
    pi = mech.scheme
    u, to_s1, pay1, pay2 = signal_tables(xs, params)
    dist = np.where(to_s1, xs[:, None], 1 - xs[:, None]) * params.t
    value = np.where(to_s1, params.V1, params.V2)
    gross = float(lam @ np.einsum("is,is->i", value - dist, pi))
    transport = float(lam @ np.einsum("is,is->i", dist, pi))
    rents = consumer_utilities(mech, types, params) - mech.consumer_fees
    U = (seller_expected_revenue(1, mech, types, params), seller_expected_revenue(2, mech, types, params))
    profits = (U[0] - mech.seller_fees[0], U[1] - mech.seller_fees[1])
    fb = float(lam @ _first_best_per_type(xs, params))
    return WelfareReport(
        broker_revenue=broker_revenue(mech, types),
        consumer_surplus_total=float(lam @ rents),
        information_rent_by_type=rents,
        seller_profits=profits,
        transport_cost=transport,
        total_welfare=gross,
        efficiency_loss=fb - gross,
        first_best=fb,
        first_best_kind=_kind(params),
    )


def _continuum_report(mech, scenario) -> WelfareReport:
    params = mech.params
    t, xl = params.t, mech.x_lower
    if isinstance(mech, FullExtraction):
        ycall = lambda x: 1.0  # noqa: E731
        payoff = lambda x: 0.0  # noqa: E731
        pts = [xl]
    else:
        ycall = mech.y
        payoff = mech.consumer_payoff
        pts = [xl, *[b for b in mech.y.breakpoints if xl < b < 1]]

    def quad(f):
        return float(integrate.quad(f, 0.0, 1.0, points=pts, limit=200)[0])

    def hl_share(x):
        return 0.0 if x <= xl else 1.0 - ycall(x)

    loss = quad(lambda x: hl_share(x) * 2 * (1 - x) * t)
    transport = quad(lambda x: (1 - hl_share(x)) * x * t + hl_share(x) * (1 - x) * t)
    rents_total = quad(payoff)
    fb = params.V1 - t / 2
    total = fb - loss
    grid = getattr(scenario, "grid", 50)
    xs = scenario.types().locations if scenario is not None else np.linspace(0, 1, grid)
    rents = np.array([payoff(x) for x in xs])
    rev = mech.revenue()
    return WelfareReport(rev, rents_total, rents, (0.0, 0.0), transport, total, loss, fb,
                         _kind(params))


def compare(labels: Sequence[str], reports: Sequence[WelfareReport], tol: float = 1e-9) -> dict:
    """Per-scenario rows plus pairwise deltas; orderings are checked first.

    Recognised labels: ``no_privacy``, ``duopoly``, ``no_obedience``.
    """
    if len(labels) != len(reports):
        raise InvalidInput("labels and reports must align")
    if len(set(labels)) != len(labels):
        raise InvalidInput("labels must be distinct")
    by = dict(zip(labels, reports))
    _check_orderings(by, tol)
    rows = [dict(scenario=k, **r.as_row()) for k, r in by.items()]
    deltas = []
    for a in labels:
        for b in labels:
            if a < b:
                ra, rb = by[a].as_row(), by[b].as_row()
                deltas.append(dict(pair=f"{a}-{b}", **{k: ra[k] - rb[k] for k in ra}))
    return dict(rows=rows, deltas=deltas)


def _check_orderings(by: dict, tol: float) -> None:
    def need(cond, msg):
        if not cond:
            raise OrderingViolation(msg)

    scale = max([1.0] + [abs(r.broker_revenue) for r in by.values()])
    eps = tol * scale
    if "no_privacy" in by:
        need(abs(by["no_privacy"].efficiency_loss) <= eps, "no-privacy mechanism must be efficient")
        for other in ("duopoly", "no_obedience"):
            if other in by:
                need(by["no_privacy"].broker_revenue >= by[other].broker_revenue - eps,
                     f"no-privacy revenue below {other}")
    if "duopoly" in by and "no_obedience" in by:
        d, n = by["duopoly"], by["no_obedience"]
        need(n.broker_revenue >= d.broker_revenue - eps, "obedience must not raise revenue")
        need(d.efficiency_loss <= n.efficiency_loss + eps, "duopoly loses more surplus than no-obedience")
        need(d.consumer_surplus_total >= n.consumer_surplus_total - eps,
             "duopoly rents below no-obedience rents")
