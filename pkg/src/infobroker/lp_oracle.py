"""The broker's revenue program on a finite population, solved by simplex.

Variables are the signal probabilities pi(s|x_i), the consumer fees m_c(x_i)
and the seller fees m1, m2.  Purchase choices are fixed by the parameters,
so every constraint is linear in these variables.

``build_program`` writes the program exactly in that form.  ``solve`` works
on an equivalent copy in which each fee is replaced by the payoff it leaves
(rent = utility - fee); the two are related by an invertible linear map, and
the rent copy has IC rows whose coefficients are utility *differences* of
order t instead of utilities of order V, which keeps the tableau well
conditioned.  IC rows are activated lazily: the solve starts from the
adjacent-type pairs, checks every ordered pair at the optimum and re-solves
with any violated rows added.  The final point is audited against the full
fee-form program and against the first-principles model audit.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import simplex
from .model import (EPS, SIGNALS, InvalidInput, MarketParams, Mechanism, Population,
                    Signal, audit_mechanism, discretize, obedience_coefficients,
                    segment_index, signal_tables, x_lower)

BINDING_REL_TOL = 1e-7
AUDIT_TOL = 1e-7
OBEDIENCE_PAIRS = ((1, "H", "L"), (1, "L", "H"), (2, "H", "L"), (2, "L", "H"))


@dataclass(frozen=True)
class ScenarioSpec:
    params: MarketParams
    population: Population
    consumer_ic: bool = True
    obedience: bool = True
    fee_nonneg: bool = True
    tolerance: float = EPS
    grid: int = 50

    def __post_init__(self):
        if self.population.uniform and self.grid < 2:
            raise InvalidInput("uniform populations need a grid of at least 2 cells")
        if not self.tolerance > 0:
            raise InvalidInput("tolerance must be positive")

    def types(self) -> Population:
        return discretize(self.population, self.params, self.grid)

    def replace(self, **changes) -> "ScenarioSpec":
        fields_ = dict(params=self.params, population=self.population,
                       consumer_ic=self.consumer_ic, obedience=self.obedience,
                       fee_nonneg=self.fee_nonneg, tolerance=self.tolerance, grid=self.grid)
        fields_.update(changes)
        return ScenarioSpec(**fields_)


@dataclass(frozen=True)
class ConstraintRecord:
    family: str          # IC, consumerIR, obedience, sellerIR, simplex-internal
    indices: tuple
    name: str
    slack: float
    rhs: float

    @property
    def binding(self) -> bool:
        return abs(self.slack) <= BINDING_REL_TOL * max(1.0, abs(self.rhs))


@dataclass(frozen=True)
class ConstraintReport:
    records: tuple

    def get(self, family: str, *indices) -> ConstraintRecord:
        for r in self.records:
            if r.family == family and r.indices == tuple(indices):
                return r
        raise KeyError((family, indices))

    def slack(self, family: str, *indices) -> float:
        return self.get(family, *indices).slack

    def family(self, name: str) -> list[ConstraintRecord]:
        return [r for r in self.records if r.family == name]

    @property
    def min_slack(self) -> float:
        return min(r.slack for r in self.records)


@dataclass(frozen=True)
class SolveResult:
    scenario: ScenarioSpec
    types: Population
    mechanism: Mechanism
    revenue: float
    consumer_payoffs: np.ndarray
    seller_payoffs: tuple
    binding: ConstraintReport
    solver_stats: dict = field(default_factory=dict)

    def y(self) -> np.ndarray:
        """Probability of (L, L) per type."""
        return self.mechanism.scheme[:, Signal.LL].copy()


# -- program construction ---------------------------------------------------------

def _pi(i: int, s: int) -> int:
    return 4 * i + s


def _tables(params: MarketParams, types: Population):
    u, _, pay1, pay2 = signal_tables(types.locations, params)
    ob = {(k, p, q): obedience_coefficients(k, params.price(p), params.price(q),
                                            types.locations, params)
          for k, p, q in OBEDIENCE_PAIRS}
    return u, pay1, pay2, ob


def variable_names(n: int) -> tuple[str, ...]:
    names = [f"pi[{s.name}|{i + 1}]" for i in range(n) for s in SIGNALS]
    names += [f"m_c[{i + 1}]" for i in range(n)]
    return tuple(names + ["m1", "m2"])


def build_program(scenario: ScenarioSpec) -> simplex.LinearProgram:
    """Fee-form program; row names are ``family:indices`` with 1-based type indices."""
    types = scenario.types()
    if types.size == 0:
        raise InvalidInput("population is empty")
    params = scenario.params
    n = types.size
    lam = types.masses
    u, pay1, pay2, ob = _tables(params, types)
    nv = 5 * n + 2
    mc = lambda i: 4 * n + i  # noqa: E731
    m1, m2 = 5 * n, 5 * n + 1
    rows, names = [], []

    def add(coeffs, sense, rhs, name):
        rows.append((coeffs, sense, rhs))
        names.append(name)

    for i in range(n):
        a = np.zeros(nv)
        a[_pi(i, 0):_pi(i, 0) + 4] = 1.0
        add(a, simplex.EQ, 1.0, f"simplex-internal:{i + 1}")
    if scenario.consumer_ic:
        for i, j in itertools.permutations(range(n), 2):
            # u_i . pi_i - m_i >= u_i . pi_j - m_j
            a = np.zeros(nv)
            a[_pi(i, 0):_pi(i, 0) + 4] += u[i]
            a[_pi(j, 0):_pi(j, 0) + 4] -= u[i]
            a[mc(i)] -= 1.0
            a[mc(j)] += 1.0
            add(a, simplex.GE, 0.0, f"IC:{i + 1}:{j + 1}")
    for i in range(n):
        a = np.zeros(nv)
        a[_pi(i, 0):_pi(i, 0) + 4] = u[i]
        a[mc(i)] = -1.0
        add(a, simplex.GE, 0.0, f"consumerIR:{i + 1}")
    if scenario.obedience:
        for k, p, q in OBEDIENCE_PAIRS:
            a = np.zeros(nv)
            a[: 4 * n] = (lam[:, None] * ob[(k, p, q)]).ravel()
            add(a, simplex.GE, 0.0, f"obedience:{k}:{p}:{q}")
    for k, pay, mk in ((1, pay1, m1), (2, pay2, m2)):
        a = np.zeros(nv)
        a[: 4 * n] = (lam[:, None] * pay).ravel()
        a[mk] = -1.0
        add(a, simplex.GE, 0.0, f"sellerIR:{k}")

    c = np.zeros(nv)
    c[4 * n: 5 * n] = lam
    c[m1] = c[m2] = 1.0
    lower = np.zeros(nv)
    if not scenario.fee_nonneg:
        lower[4 * n: 5 * n] = -np.inf
    upper = np.full(nv, np.inf)
    return simplex.LinearProgram.from_rows(c, rows, list(zip(lower, upper)),
                                           variable_names(n), names)


def parse_row_name(name: str) -> tuple[str, tuple]:
    family, *rest = name.split(":")
    idx = tuple(int(v) if v.isdigit() else v for v in rest)
    return family, idx


# -- solving --------------------------------------------------------------------

def _rent_program(params, types, scenario, ic_pairs):
    """Same program with fees replaced by consumer rents r_i and seller slacks s_k."""
    n = types.size
    lam = types.masses
    u, pay1, pay2, ob = _tables(params, types)
    nv = 5 * n + 2
    r = lambda i: 4 * n + i  # noqa: E731
    rows = []
    for i in range(n):
        a = np.zeros(nv)
        a[_pi(i, 0):_pi(i, 0) + 4] = 1.0
        rows.append((a, simplex.EQ, 1.0))
    for i, j in ic_pairs:
        # r_i >= r_j + (u_i - u_j) . pi_j
        a = np.zeros(nv)
        a[r(i)] = 1.0
        a[r(j)] -= 1.0
        a[_pi(j, 0):_pi(j, 0) + 4] -= u[i] - u[j]
        rows.append((a, simplex.GE, 0.0))
    if scenario.fee_nonneg:
        for i in range(n):
            a = np.zeros(nv)
            a[_pi(i, 0):_pi(i, 0) + 4] = u[i]
            a[r(i)] = -1.0
            rows.append((a, simplex.GE, 0.0))
    if scenario.obedience:
        for key in OBEDIENCE_PAIRS:
            a = np.zeros(nv)
            a[: 4 * n] = (lam[:, None] * ob[key]).ravel()
            rows.append((a, simplex.GE, 0.0))
    seller_rows = []
    for k, pay in ((0, pay1), (1, pay2)):
        a = np.zeros(nv)
        a[: 4 * n] = (lam[:, None] * pay).ravel()
        a[5 * n + k] = -1.0
        rows.append((a, simplex.GE, 0.0))  # m_k = U_k - s_k >= 0
        seller_rows.append(a)
    c = np.zeros(nv)
    c[: 4 * n] = (lam[:, None] * (u + pay1 + pay2)).ravel()
    c[4 * n: 5 * n] = -lam
    c[5 * n:] = -1.0
    return simplex.LinearProgram.from_rows(c, rows), u, pay1, pay2


def _ic_violations(u, pi, rent, pairs, tol):
    n = rent.size
    # slack[i, j] = r_i - r_j - (u_i - u_j) . pi_j
    cross = u @ pi.T                      # cross[i, j] = u_i . pi_j
    own = np.einsum("is,is->i", u, pi)    # u_j . pi_j
    slack = rent[:, None] - rent[None, :] - (cross - own[None, :])
    bad = [(i, j) for i in range(n) for j in range(n)
           if i != j and (i, j) not in pairs and slack[i, j] < -tol]
    return bad


def canonicalize(mech: Mechanism, types: Population, params: MarketParams) -> Mechanism:
    """Pick the sparse representative among payoff-equivalent optima (asymmetric model).

    At or below the boundary, (H,L) buys from S1 at H exactly like (H,H), and
    (L,H) / (L,L) buy from S1 at L; moving those to (H,H) while cutting the
    fee by (H - L) per unit moved and charging S1 the extra revenue leaves
    every IC difference, obedience slack and the objective unchanged.  Above
    the boundary (L,H) behaves like (L,L) for the type itself and only weakly
    lowers what others get by mimicking it.
    """
    if not params.is_asymmetric:
        return mech
    pi = mech.scheme.copy()
    fees = mech.consumer_fees.copy()
    m1, m2 = mech.seller_fees
    xl = x_lower(params)
    gap = params.H - params.L
    for i, x in enumerate(types.locations):
        if x <= xl:
            cheap = pi[i, Signal.LH] + pi[i, Signal.LL]
            if fees[i] - gap * cheap < 0.0:
                cheap = 0.0
            else:
                pi[i, Signal.LH] = pi[i, Signal.LL] = 0.0
            pi[i, Signal.HH] += pi[i, Signal.HL] + cheap
            pi[i, Signal.HL] = 0.0
            fees[i] -= gap * cheap
            m1 += types.masses[i] * gap * cheap
        else:
            pi[i, Signal.LL] += pi[i, Signal.LH]
            pi[i, Signal.LH] = 0.0
    return Mechanism(pi, fees, (m1, m2))


def evaluate(lp: simplex.LinearProgram, point: np.ndarray) -> ConstraintReport:
    slacks = simplex.row_slacks(lp, point)
    records = []
    for name, value, rhs in zip(lp.row_names, slacks, lp.rhs):
        fam, idx = parse_row_name(name)
        records.append(ConstraintRecord(fam, idx, name, float(value), float(rhs)))
    n_fee = lp.n_vars - 2
    for k, col in ((1, n_fee), (2, n_fee + 1)):
        records.append(ConstraintRecord("sellerIR", (f"m{k}>=0",), f"sellerIR:m{k}>=0",
                                        float(point[col]), 0.0))
    return ConstraintReport(tuple(records))


def mechanism_point(mech: Mechanism) -> np.ndarray:
    return np.concatenate([mech.scheme.ravel(), mech.consumer_fees, mech.seller_fees])


def solve(scenario: ScenarioSpec, canonical: bool = True) -> SolveResult:
    start = time.perf_counter()
    params = scenario.params
    types = scenario.types()
    n = types.size
    if scenario.consumer_ic:
        pairs = {(i, i + 1) for i in range(n - 1)} | {(i + 1, i) for i in range(n - 1)}
    else:
        pairs = set()
    rounds = iterations = 0
    while True:
        ordered = sorted(pairs)
        lp, u, pay1, pay2 = _rent_program(params, types, scenario, ordered)
        sol = simplex.solve(lp)
        rounds += 1
        iterations += sol.iterations
        if not sol.optimal:
            raise simplex.SolverFailure(
                f"broker program reported {sol.status.value}; the null mechanism is "
                "always feasible, so this is a construction error")
        pi = sol.primal[: 4 * n].reshape(n, 4)
        rent = sol.primal[4 * n: 5 * n]
        if not scenario.consumer_ic:
            break
        extra = _ic_violations(u, pi, rent, pairs, AUDIT_TOL * 1e-2)
        if not extra:
            break
        pairs |= set(extra)

    pi = np.clip(pi, 0.0, 1.0)
    pi /= pi.sum(axis=1, keepdims=True)
    fees = np.einsum("is,is->i", u, pi) - rent
    if scenario.fee_nonneg:
        fees = np.maximum(fees, 0.0)
    slack_s = sol.primal[5 * n:]
    U = (types.masses @ np.einsum("is,is->i", pay1, pi),
         types.masses @ np.einsum("is,is->i", pay2, pi))
    m = tuple(float(max(U[k] - slack_s[k], 0.0)) for k in range(2))
    mech = Mechanism(pi, fees, m)
    if canonical:
        mech = canonicalize(mech, types, params)
    pi, fees, m = mech.scheme, mech.consumer_fees, mech.seller_fees
    U = (types.masses @ np.einsum("is,is->i", pay1, pi),
         types.masses @ np.einsum("is,is->i", pay2, pi))

    full = build_program(scenario)
    report = evaluate(full, mechanism_point(mech))
    scale = max(1.0, abs(params.V1))
    if report.min_slack < -AUDIT_TOL * scale:
        worst = min(report.records, key=lambda r: r.slack)
        raise simplex.SolverFailure(f"optimum fails the program audit at {worst.name} "
                                    f"(slack {worst.slack:.3g})")
    check = audit_mechanism(mech, types, params, consumer_ic=scenario.consumer_ic,
                            obedience=scenario.obedience, fee_nonneg=scenario.fee_nonneg,
                            tol=AUDIT_TOL * scale)
    if not check.feasible:
        v = check.violations[0]
        raise simplex.SolverFailure(f"optimum fails the model audit at {v.family} {v.label}")

    revenue = float(sum(m) + types.masses @ fees)
    u_own = np.einsum("is,is->i", u, pi)
    stats = dict(iterations=iterations, rounds=rounds,
                 ic_rows_active=len(pairs), ic_rows_total=n * (n - 1) if scenario.consumer_ic else 0,
                 seconds=time.perf_counter() - start)
    return SolveResult(scenario=scenario, types=types, mechanism=mech, revenue=revenue,
                       consumer_payoffs=u_own - fees,
                       seller_payoffs=(float(U[0] - m[0]), float(U[1] - m[1])),
                       binding=report, solver_stats=stats)


def binding_report(result: SolveResult, scenario: Optional[ScenarioSpec] = None) -> dict:
    """Binding constraints grouped by family, families and members in a fixed order."""
    order = ("simplex-internal", "IC", "consumerIR", "obedience", "sellerIR")
    out = {}
    for fam in order:
        hits = [r.name for r in result.binding.records if r.family == fam and r.binding]
        if hits:
            out[fam] = hits
    return out


# -- brute force -----------------------------------------------------------------

@dataclass(frozen=True)
class Counterexample:
    lp_revenue: float
    grid_revenue: float
    bound: float
    y: tuple

    @property
    def gap(self) -> float:
        return self.lp_revenue - self.grid_revenue


@dataclass(frozen=True)
class BruteForceOutcome:
    grid_revenue: float
    lp_revenue: float
    bound: float
    best_y: tuple
    points: int
    counterexample: Optional[Counterexample]


def max_fees(u: np.ndarray, pi: np.ndarray, consumer_ic: bool = True):
    """Largest consumer fees compatible with IR and IC for a fixed signal scheme.

    The constraints are difference constraints m_i - m_j <= u_i.(pi_i - pi_j)
    plus m_i <= u_i.pi_i, so the componentwise largest solution is the vector
    of shortest-path distances from a virtual root.  ``pi`` may carry leading
    batch axes: shape (..., n, 4).  Returns fees (..., n) and a feasibility
    mask (False where a negative cycle exists).
    """
    cross = np.einsum("is,...js->...ij", u, pi)              # u_i . pi_j
    own = np.einsum("is,...is->...i", u, pi)
    dist = own.copy()
    if not consumer_ic:
        return dist, np.ones(dist.shape[:-1], dtype=bool)
    w = own[..., :, None] - cross                              # edge i <- j weight
    n = u.shape[0]
    for _ in range(n):
        dist = np.minimum(dist, (dist[..., None, :] + w).min(axis=-1))
    again = np.minimum(dist, (dist[..., None, :] + w).min(axis=-1))
    ok = np.all(again >= dist - 1e-12, axis=-1)
    return dist, ok


def brute_force_verify(scenario: ScenarioSpec, grid_steps: int = 21,
                       lp_revenue: Optional[float] = None) -> BruteForceOutcome:
    """Exhaustive search over the reduced mechanism space, compared with the LP.

    Types at or below the segment boundary receive (H,H); each type above it
    mixes (L,L) with probability y and (H,L) otherwise, y on a uniform grid.
    Fees are the largest ones the IR/IC constraints allow and sellers pay
    their full expected revenue.  Raising any y lowers no constraint's slack
    among obedience rows and moves revenue by at most (H-L) per unit, so the
    grid maximum sits within (H-L)*h*free_dims of the true optimum.
    """
    params = scenario.params
    if not params.is_asymmetric:
        raise InvalidInput("brute force search covers the asymmetric model only")
    if not 2 <= grid_steps <= 21:
        raise InvalidInput("grid_steps must be between 2 and 21")
    types = scenario.types()
    seg = np.array([segment_index(x, params) for x in types.locations])
    free = np.nonzero(seg == 1)[0]
    if free.size > 2 or types.size > 6:
        raise InvalidInput("brute force needs at most two types above the boundary")
    if lp_revenue is None:
        lp_revenue = solve(scenario).revenue

    u, _, pay1, pay2 = signal_tables(types.locations, params)
    h = 1.0 / (grid_steps - 1)
    levels = np.linspace(0.0, 1.0, grid_steps)
    combos = np.array(list(itertools.product(levels, repeat=free.size))).reshape(-1, free.size)
    P = combos.shape[0]
    pi = np.zeros((P, types.size, 4))
    pi[:, seg == 0, Signal.HH] = 1.0
    pi[:, free, Signal.LL] = combos
    pi[:, free, Signal.HL] = 1.0 - combos

    lam = types.masses
    U1 = np.einsum("i,is,pis->p", lam, pay1, pi)
    U2 = np.einsum("i,is,pis->p", lam, pay2, pi)
    fees, ok = max_fees(u, pi, scenario.consumer_ic)
    if scenario.fee_nonneg:
        ok &= np.all(fees >= -1e-12, axis=1)
    if scenario.obedience:
        for key in OBEDIENCE_PAIRS:
            coef = obedience_coefficients(key[0], params.price(key[1]), params.price(key[2]),
                                          types.locations, params)
            ok &= np.einsum("i,is,pis->p", lam, coef, pi) >= -1e-12
    revenue = np.where(ok, U1 + U2 + fees @ lam, -np.inf)
    best = int(np.argmax(revenue))
    bound = (params.H - params.L) * h * free.size + 1e-9 * max(1.0, abs(params.V1))
    grid_rev = float(revenue[best])
    gap = lp_revenue - grid_rev
    cex = None
    if gap > bound or gap < -1e-7 * max(1.0, abs(params.V1)):
        cex = Counterexample(float(lp_revenue), grid_rev, bound, tuple(combos[best]))
    return BruteForceOutcome(grid_rev, float(lp_revenue), bound, tuple(combos[best]), P, cex)


def solve_without(scenario: ScenarioSpec, row_name: str) -> float:
    """Optimal value of the program with one named row removed (a deliberately loosened LP)."""
    lp = build_program(scenario)
    keep = [i for i, name in enumerate(lp.row_names) if name != row_name]
    if len(keep) == lp.n_rows:
        raise InvalidInput(f"no row named {row_name!r}")
    loose = simplex.LinearProgram(lp.objective, lp.A[keep], tuple(lp.senses[i] for i in keep),
                                  lp.rhs[keep], lp.lower, lp.upper, lp.names,
                                  tuple(lp.row_names[i] for i in keep))
    sol = simplex.solve(loose)
    if not sol.optimal:
        raise simplex.SolverFailure(f"loosened program reported {sol.status.value}")
    return float(sol.objective_value)
