"""Closed-form optimal mechanisms and the structure checks used to audit LP optima.

Asymmetric model: types below the boundary x_lower are sent (H,H); above it
the broker sends (L,L) with probability y(x) and (H,L) otherwise, with y a
step function that equals 1 up to a threshold and 1/2 beyond.  Fees follow
from the envelope condition G'(x) = (1 - 2 y(x)) t with G(1) = 0.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from .model import (EPS, InvalidInput, MarketParams, Mechanism, Population, Signal,
                    audit_mechanism, broker_revenue, consumer_utilities,
                    seller_expected_revenue, signal_tables, uniform_grid, x_lower)

BRANCH_TOL = 1e-9


def _require_asymmetric(params: MarketParams) -> None:
    if not params.is_asymmetric:
        raise InvalidInput("this closed form covers the asymmetric model only")


# -- step functions ----------------------------------------------------------------

@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant function on [edges[0], edges[-1]].

    Piece k covers (edges[k], edges[k+1]]; the first piece also owns edges[0].
    """

    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if e.size != v.size + 1 or np.any(np.diff(e) < 0):
            raise InvalidInput("step function needs increasing edges, one more than values")
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: float, a: float = 0.0, b: float = 1.0) -> "StepFunction":
        return cls(np.array([a, b]), np.array([value]))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = np.clip(np.searchsorted(self.edges, x, side="left") - 1, 0, self.values.size - 1)
        out = self.values[k]
        return float(out) if out.ndim == 0 else out

    def integral(self, a: float, b: float) -> float:
        """Integral over [a, b] (a <= b), clipped to the support."""
        lo = np.clip(self.edges[:-1], a, b)
        hi = np.clip(self.edges[1:], a, b)
        return float(np.sum(self.values * (hi - lo)))

    def cell_average(self, a: float, b: float) -> float:
        return self.integral(a, b) / (b - a)

    @property
    def breakpoints(self) -> np.ndarray:
        return self.edges[1:-1]


def threshold_shape(xl: float, threshold: float) -> StepFunction:
    """y = 1 on [xl, threshold], 1/2 on (threshold, 1]."""
    if threshold >= 1.0:
        return StepFunction(np.array([xl, 1.0]), np.array([1.0]))
    if threshold <= xl:
        return StepFunction(np.array([xl, 1.0]), np.array([0.5]))
    return StepFunction(np.array([xl, threshold, 1.0]), np.array([1.0, 0.5]))


# -- envelope payments -------------------------------------------------------------

@dataclass(frozen=True)
class EnvelopeFees:
    """Fee schedule on [x_lower, 1] that keeps the top type's payoff at zero."""

    y: Union[StepFunction, Callable]
    params: MarketParams
    start: float

    def utility(self, x):
        p = self.params
        yx = self.y(x)
        return yx * (p.V1 - x * p.t - p.L) + (1 - yx) * (p.V2 - (1 - x) * p.t - p.L)

    def payoff(self, x) -> float:
        """G(x) = integral from x to 1 of (2 y - 1) t."""
        t = self.params.t
        if isinstance(self.y, StepFunction):
            return float(t * (2.0 * self.y.integral(x, 1.0) - (1.0 - x)))
        val, _ = integrate.quad(lambda z: (2.0 * self.y(z) - 1.0) * t, x, 1.0, limit=200)
        return float(val)

    def __call__(self, x):
        if np.ndim(x):
            return np.array([self(v) for v in np.asarray(x)])
        return float(self.utility(x) - self.payoff(x))


def payments_from_envelope(y, params: MarketParams, start: Optional[float] = None) -> EnvelopeFees:
    _require_asymmetric(params)
    start = x_lower(params) if start is None else start
    probe = np.linspace(start, 1.0, 257)
    vals = np.asarray([y(v) for v in probe], dtype=float)
    if isinstance(y, StepFunction):
        vals = np.concatenate([vals, y.values])
    if np.any(vals < -EPS) or np.any(vals > 1 + EPS):
        raise InvalidInput("y must take values in [0, 1]")
    return EnvelopeFees(y, params, start)


# -- thresholds --------------------------------------------------------------------

def optimal_threshold_x_star(params: MarketParams) -> float:
    """Lowest threshold the seller-1 obedience constraint allows, floored at the optimum.

    With (L,L) w.p. 1 up to x* and 1/2 beyond, seller 1's (H -> L) deviation
    gains L on half of (x*, 1] and loses H - L on [0, x_lower):
    x_lower H >= (x_lower + (1 - x*) / 2) L, i.e. x* >= 1 - 2 x_lower (H - L) / L.
    Without that constraint revenue V - t + t x - t x^2 peaks at x = 1/2.
    """
    _require_asymmetric(params)
    xl = x_lower(params)
    floor = 0.5 if xl < 0.5 else xl
    bound = 1.0 - 2.0 * xl * (params.H - params.L) / params.L
    return float(np.clip(max(floor, bound), xl, 1.0))


def reported_threshold_x_star(params: MarketParams) -> float:
    """The same rule with the (H,L) mass on (x*, 1] counted as 1 - x* instead of (1 - x*)/2.

    Kept for side-by-side printing; its value is not feasible for the obedience
    constraint whenever the bound term exceeds the floor.
    """
    xl = x_lower(params)
    floor = 0.5 if xl < 0.5 else xl
    return float(np.clip(max(floor, 1.0 - xl * (params.H - params.L) / params.L), xl, 1.0))


def threshold_x_double_star(params: MarketParams) -> float:
    _require_asymmetric(params)
    xl = x_lower(params)
    return float(np.clip(max(xl, 0.5), xl, 1.0))


# -- threshold mechanisms ----------------------------------------------------------

@dataclass(frozen=True)
class ThresholdMechanism:
    params: MarketParams
    x_lower: float
    x_star: float
    y: StepFunction
    fee_low_segment: float
    fee_schedule: EnvelopeFees
    seller_fees: tuple

    def fee(self, x):
        if np.ndim(x):
            return np.array([self.fee(v) for v in np.asarray(x)])
        return self.fee_low_segment if x <= self.x_lower else self.fee_schedule(x)

    def scheme_at(self, x: float) -> np.ndarray:
        out = np.zeros(4)
        if x <= self.x_lower:
            out[Signal.HH] = 1.0
        else:
            yx = self.y(x)
            out[Signal.LL] = yx
            out[Signal.HL] = 1.0 - yx
        return out

    def consumer_payoff(self, x: float) -> float:
        p = self.params
        if x <= self.x_lower:
            return p.V1 - x * p.t - p.H - self.fee_low_segment
        return self.fee_schedule.payoff(x)

    @property
    def information_rent(self) -> float:
        """Payoff of the boundary type, G(x_lower)."""
        return self.fee_schedule.payoff(self.x_lower)

    def revenue(self) -> float:
        """Integral of the fee schedule plus seller fees (uniform population)."""
        pts = [self.x_lower, *[b for b in self.y.breakpoints if self.x_lower < b < 1.0]]
        top = sum(integrate.quad(self.fee_schedule, a, b, limit=200)[0]
                  for a, b in zip(pts, pts[1:] + [1.0]) if b > a)
        return float(self.x_lower * self.fee_low_segment + top + sum(self.seller_fees))

    def on_grid(self, N: int) -> tuple[Population, Mechanism]:
        """Cell-averaged version on N equal cells (split at x_lower).

        Types sit at cell midpoints with the cell's mass.  Each cell above the
        boundary gets the cell average of y; fees follow the discrete
        envelope recursion, with the top type's payoff at zero, and the
        first-segment fee makes the top first-segment type indifferent to
        reporting the first type above the boundary.
        """
        xs, lam = uniform_grid(N, [self.x_lower])
        edges = np.concatenate([[0.0], np.cumsum(lam)])
        edges[-1] = 1.0
        return self.on_population(Population(xs, lam / lam.sum()), edges)

    def on_population(self, types: Population, edges: Optional[np.ndarray] = None):
        p = self.params
        xs, t, xl = types.locations, p.t, self.x_lower
        high = np.nonzero(xs > xl)[0]
        low = np.nonzero(xs <= xl)[0]
        if high.size == 0:
            raise InvalidInput("discrete version needs a type above the boundary")
        y = np.zeros(xs.size)
        for i in high:
            if edges is not None:
                y[i] = self.y.cell_average(max(edges[i], xl), edges[i + 1])
            else:
                y[i] = self.y(xs[i])
        pi = np.zeros((xs.size, 4))
        pi[low, Signal.HH] = 1.0
        pi[high, Signal.LL] = y[high]
        pi[high, Signal.HL] = 1.0 - y[high]
        G = np.zeros(xs.size)
        for k in range(high.size - 2, -1, -1):
            j, j1 = high[k], high[k + 1]
            G[j] = G[j1] + (2.0 * y[j1] - 1.0) * (xs[j1] - xs[j]) * t
        util = consumer_utilities(Mechanism(pi, np.zeros(xs.size), (0.0, 0.0)), types, p)
        fees = util - G
        if low.size:
            a, b1 = low[-1], high[0]
            Ga = (G[b1] + y[b1] * (xs[b1] - xs[a]) * t
                  + (1.0 - y[b1]) * (2.0 * xl - xs[a] - xs[b1]) * t)
            fees[low] = p.V1 - xs[a] * t - p.H - Ga
        draft = Mechanism(pi, fees, (0.0, 0.0))
        m = (seller_expected_revenue(1, draft, types, p), seller_expected_revenue(2, draft, types, p))
        return types, Mechanism(pi, fees, m)

    def grid_revenue(self, N: int) -> float:
        types, mech = self.on_grid(N)
        return broker_revenue(mech, types)


def _threshold_mechanism(params: MarketParams, threshold: float) -> ThresholdMechanism:
    xl = x_lower(params)
    y = threshold_shape(xl, threshold)
    fees = payments_from_envelope(y, params, xl)
    G_xl = fees.payoff(xl)
    fee_low = params.V1 - xl * params.t - params.H - G_xl
    # seller revenues on the uniform population
    mass_hl = 1.0 - xl - y.integral(xl, 1.0)
    U1 = xl * params.H + (1.0 - xl - mass_hl) * params.L
    U2 = mass_hl * params.L
    return ThresholdMechanism(params, xl, float(threshold), y, float(fee_low), fees, (U1, U2))


def solve_privacy_duopoly(params: MarketParams) -> ThresholdMechanism:
    _require_asymmetric(params)
    return _threshold_mechanism(params, optimal_threshold_x_star(params))


def solve_no_obedience(params: MarketParams) -> ThresholdMechanism:
    _require_asymmetric(params)
    return _threshold_mechanism(params, threshold_x_double_star(params))


def threshold_mechanism(params: MarketParams, threshold: float) -> ThresholdMechanism:
    """Mechanism of the same shape at an arbitrary threshold in [x_lower, 1]."""
    _require_asymmetric(params)
    xl = x_lower(params)
    if not xl - EPS <= threshold <= 1.0 + EPS:
        raise InvalidInput("threshold must lie in [x_lower, 1]")
    return _threshold_mechanism(params, float(np.clip(threshold, xl, 1.0)))


# -- no privacy --------------------------------------------------------------------

@dataclass(frozen=True)
class FullExtraction:
    """(H,H) below the boundary, (L,L) above, every payoff extracted."""

    params: MarketParams
    x_lower: float

    def fee(self, x):
        p = self.params
        x = np.asarray(x, dtype=float)
        out = np.where(x <= self.x_lower, p.V1 - x * p.t - p.H, p.V1 - x * p.t - p.L)
        return float(out) if out.ndim == 0 else out

    @property
    def seller_fees(self) -> tuple:
        return (self.x_lower * self.params.H + (1 - self.x_lower) * self.params.L, 0.0)

    def revenue(self) -> float:
        val, _ = integrate.quad(self.fee, 0.0, 1.0, points=[self.x_lower])
        return float(val + sum(self.seller_fees))


def solve_no_privacy(params: MarketParams, population: Population):
    """Discrete populations get a Mechanism; the uniform population a FullExtraction."""
    _require_asymmetric(params)
    xl = x_lower(params)
    if population.uniform:
        return FullExtraction(params, xl)
    xs = population.locations
    low = xs <= xl
    pi = np.zeros((xs.size, 4))
    pi[low, Signal.HH] = 1.0
    pi[~low, Signal.LL] = 1.0
    fees = np.where(low, params.V1 - xs * params.t - params.H, params.V1 - xs * params.t - params.L)
    draft = Mechanism(pi, fees, (0.0, 0.0))
    m1 = seller_expected_revenue(1, draft, population, params)
    return Mechanism(pi, fees, (m1, 0.0))


# -- three consumers ---------------------------------------------------------------

@dataclass(frozen=True)
class ThreeConsumerSolution:
    y2: float
    y3: float
    fees: tuple
    binding_case: str
    binding_ir: str
    revenue: float
    mechanism: Mechanism
    candidates: tuple = field(default=())


def _three_consumer_branches(p: MarketParams, x1, x2, x3, l1, l2, l3):
    """Every (label, y2, y3) whose branch conditions hold within BRANCH_TOL."""
    H, L, t = p.H, p.L, p.t
    d = H - L
    tol = BRANCH_TOL
    ge = lambda a, b: a >= b - tol           # noqa: E731
    gt = lambda a, b: a > b - tol            # noqa: E731
    le = lambda a, b: a <= b + tol           # noqa: E731
    lt = lambda a, b: a < b + tol            # noqa: E731
    pooled = max(0.5, 1 - l1 * d / (L * (l2 + l3)))
    ratio = (L - H + (2 - x1 - x2) * t) / (L - H + (2 - 2 * x2) * t)
    key = l1 * d / L
    out = []

    if lt(key, 0.5 * l3):
        c = 1 - l1 * d / ((l1 + l2) * 2 * t)
        if ge(c, x2):
            if ge(l3 * (1 - x3), (x3 - x2) * (l1 + l2)):
                out.append(("A1.1", 1.0, 1.0))
            if lt(l3 * (1 - x3), (x3 - x2) * (l1 + l2)):
                out.append(("A1.2", 1.0, max(0.5, 1 - l1 * d / (l3 * L))))
        if lt(c, x2):
            mid = l3 + x2 * (1 - l3)
            if le(x3, mid):
                if lt(x3, 1 - l1 * d / (2 * t)):
                    out.append(("A2.1.1", 1.0, 1.0))
                if ge(x3, 1 - l1 * d / (2 * t)):
                    out.append(("A2.1.2", pooled, pooled))
            if gt(x3, mid):
                lhs = l1 * d
                rhs = 2 * (l1 + l2) * (1 - 2 * x2 + x3) * t - 2 * l3 * (1 - x3) * t
                if lt(lhs, rhs):
                    out.append(("A2.2.1", 1.0, 1 - l1 * d / (l3 * L)))
                if ge(lhs, rhs):
                    out.append(("A2.2.2", pooled, pooled))
    if ge(key, 0.5 * l3):
        c = 1 - l1 / (1 - l3) * d / (2 * t)
        if ge(c, x2):
            val = (l1 + l2) * (2 * x2 - 2 * x3) * t + 2 * l3 * (1 - x3) * t
            if ge(val, 0.0):
                out.append(("B1.1", 1.0, 1.0))
            if lt(val, 0.0):
                out.append(("B1.2", 1.0, 0.5))
        if gt(x2, c):
            edge = 1 - l1 * d / (2 * t)
            mid = l3 + x2 * (1 - l3)
            upper = 1 + l1 * d / (2 * t) - 2 * (l1 + l2) * (1 - x2)
            if le(x2, edge):
                if lt(x3, edge):
                    out.append(("B2.1.1", 1.0, 1.0))
                if ge(mid, x3) and ge(x3, edge):
                    out.append(("B2.1.2", pooled, pooled))
                if ge(upper, x3) and gt(x3, mid):
                    out.append(("B2.1.3", pooled, pooled))
                if gt(x3, max(upper, mid)) and ge(x3, edge):
                    y2 = max(0.5, 1 - (l1 * d / (L * l2) - l3 / (2 * l2)))
                    out.append(("B2.1.4", y2, 0.5))
            if gt(x2, edge):
                cases = []
                if ge(mid, x3) and ge(x3, edge):
                    cases.append("B2.2.1")
                if ge(upper, x3) and gt(x3, mid):
                    cases.append("B2.2.2")
                if gt(x3, upper):
                    cases.append("B2.2.3")
                for cs in cases:
                    if ge(key, 1 - l1):
                        v = max(0.0, ratio)
                        out.append((cs + ".1", v, v))
                    last = cs == "B2.2.3"
                    if le(key, 0.5 * (l2 + l3)) and not last:
                        out.append((cs + ".2", pooled, pooled))
                    if le(key, 1 - l1) and (ge(key, 0.5 * (l2 + l3)) if last
                                            else gt(key, 0.5 * (l2 + l3))):
                        v = max(ratio, 1 - l1 * d / (L * (l2 + l3)))
                        out.append((cs + ".3", v, v))
                    if last and lt(key, 0.5 * (l2 + l3)):
                        y2 = 1 - (l1 * d / (l2 * L) - l3 / (2 * l2))
                        out.append((cs + ".4", y2, 0.5))
    return out


def _three_consumer_candidate(p, pop, y2, y3):
    x1, x2, x3 = pop.locations
    t = p.t
    pi = np.zeros((3, 4))
    pi[0, Signal.HH] = 1.0
    pi[1, Signal.LL], pi[1, Signal.HL] = y2, 1 - y2
    pi[2, Signal.LL], pi[2, Signal.HL] = y3, 1 - y3
    U = consumer_utilities(Mechanism(pi, np.zeros(3), (0, 0)), pop, p)
    gap23 = (y2 - y3) * (2 - 2 * x2) * t
    m2 = min(U[1], U[2] + gap23)
    fees = np.array([m2 - y2 * (p.H - p.L), m2, m2 - gap23])
    draft = Mechanism(pi, fees, (0.0, 0.0))
    m = (seller_expected_revenue(1, draft, pop, p), seller_expected_revenue(2, draft, pop, p))
    mech = Mechanism(pi, fees, m)
    binding = "x2" if U[1] - fees[1] <= U[2] - fees[2] else "x3"
    return mech, binding


def solve_three_consumers(params: MarketParams, x1: float, x2: float, x3: float,
                          masses: Sequence[float]) -> ThreeConsumerSolution:
    """Evaluate the full branch tree; ties resolved by the best audited revenue."""
    _require_asymmetric(params)
    xl = x_lower(params)
    if not (0 < x1 < xl and xl < x2 < x3 < 1):
        raise InvalidInput("need 0 < x1 < x_lower < x2 < x3 < 1")
    pop = Population.discrete([x1, x2, x3], masses)
    l1, l2, l3 = pop.masses
    branches = _three_consumer_branches(params, x1, x2, x3, l1, l2, l3)
    if not branches:
        raise InvalidInput("no branch condition holds; inputs outside the characterised region")
    scored = []
    for label, y2, y3 in branches:
        y2c, y3c = float(np.clip(y2, 0, 1)), float(np.clip(y3, 0, 1))
        mech, binding = _three_consumer_candidate(params, pop, y2c, y3c)
        audit = audit_mechanism(mech, pop, params, tol=1e-7 * max(1.0, params.V1))
        rev = broker_revenue(mech, pop) if audit.feasible else -np.inf
        scored.append((rev, label, y2c, y3c, mech, binding))
    best = max(scored, key=lambda s: s[0])
    if not np.isfinite(best[0]):
        raise InvalidInput("no branch of the tree yields a feasible mechanism")
    rev, label, y2, y3, mech, binding = best
    return ThreeConsumerSolution(y2, y3, tuple(mech.consumer_fees), label, binding, rev, mech,
                                 tuple((s[1], s[2], s[3], s[0]) for s in scored))


# -- symmetric two consumers without obedience -------------------------------------

def solve_symmetric_two_consumer_no_obedience(params: MarketParams, x1: float, x2: float,
                                              masses: Sequence[float]) -> Mechanism:
    """Full-extraction design: x1 mixes (L,H)/(L,L), x2 mixes (H,L)/(L,L)."""
    if params.is_asymmetric:
        raise InvalidInput("this closed form covers the symmetric model only")
    lo, mid, hi = (0.5 - (params.H - params.L) / (2 * params.t), 0.5,
                   0.5 + (params.H - params.L) / (2 * params.t))
    if not (lo <= x1 < mid < x2 <= hi) or x1 > 1 - x2 + 1e-12:
        raise InvalidInput("need x1 in the second segment, x2 in the third, x1 <= 1 - x2")
    pop = Population.discrete([x1, x2], masses)
    hl = max(0.0, (1 - x1 - x2) / (1 - 2 * x1))
    lh = max(0.0, (x1 + x2 - 1) / (2 * x2 - 1))
    pi = np.zeros((2, 4))
    pi[0, Signal.LH], pi[0, Signal.LL] = lh, 1 - lh
    pi[1, Signal.HL], pi[1, Signal.LL] = hl, 1 - hl
    util = consumer_utilities(Mechanism(pi, np.zeros(2), (0, 0)), pop, params)
    draft = Mechanism(pi, util, (0.0, 0.0))
    m = (seller_expected_revenue(1, draft, pop, params), seller_expected_revenue(2, draft, pop, params))
    return Mechanism(pi, util, m)


# -- structure checks --------------------------------------------------------------

@dataclass(frozen=True)
class StructureReport:
    checks: dict      # name -> (passed, detail)

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def __getitem__(self, key):
        return self.checks[key][0]


def check_structure(result, scenario=None, tol: float = 1e-6) -> StructureReport:
    """Audit an LP optimum (asymmetric) against the shape the closed forms predict."""
    scenario = scenario or result.scenario
    p = scenario.params
    _require_asymmetric(p)
    types = result.types
    xs, t = types.locations, p.t
    pi = result.mechanism.scheme
    fees = result.mechanism.consumer_fees
    xl = x_lower(p)
    low = np.nonzero(xs <= xl)[0]
    high = np.nonzero(xs > xl)[0]
    y = pi[:, Signal.LL]
    checks = {}

    worst = float(np.max(1.0 - pi[low, Signal.HH], initial=0.0))
    checks["a_first_segment_HH_only"] = (worst <= tol, f"max non-(H,H) mass {worst:.3g}")

    dy = np.diff(y[high])
    dm = np.diff(fees[high])
    ok_b = bool(np.all(dy <= tol) and np.all(dm <= tol))
    checks["b_y_and_fees_nonincreasing"] = (
        ok_b, f"max increase y {float(np.max(dy, initial=0)):.3g}, fee {float(np.max(dm, initial=0)):.3g}")

    worst_c = 0.0
    for i, j in itertools.combinations(high, 2):
        diff = fees[i] - fees[j]
        upper = 2 * (y[i] - y[j]) * (1 - xs[i]) * t
        lower = 2 * (y[i] - y[j]) * (1 - xs[j]) * t
        worst_c = max(worst_c, diff - upper, lower - diff)
    checks["c_sandwich"] = (worst_c <= tol, f"max violation {worst_c:.3g}")

    ymin = float(np.min(y[high], initial=1.0))
    checks["d_y_at_least_half"] = (ymin >= 0.5 - tol, f"min y {ymin:.6g}")

    if low.size and high.size and scenario.consumer_ic:
        a, b = low[-1] + 1, high[0] + 1
        sl = result.binding.slack("IC", a, b)
        checks["e_boundary_IC_binds"] = (abs(sl) <= tol, f"IC x{a}->x{b} slack {sl:.3g}")
    else:
        checks["e_boundary_IC_binds"] = (False, "needs types on both sides and IC on")
    return StructureReport(checks)


def analytic_structure(mech: ThresholdMechanism, N: int = 50, tol: float = 1e-6) -> StructureReport:
    """The same checks on the grid version of a closed-form mechanism."""
    from .lp_oracle import ScenarioSpec, SolveResult, build_program, evaluate, mechanism_point
    types, m = mech.on_grid(N)
    sc = ScenarioSpec(mech.params, types)
    report = evaluate(build_program(sc), mechanism_point(m))
    util = consumer_utilities(m, types, mech.params)
    res = SolveResult(sc, types, m, broker_revenue(m, types), util - m.consumer_fees,
                      (0.0, 0.0), report)
    return check_structure(res, sc, tol)
