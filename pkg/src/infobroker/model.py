"""Market primitives: parameters, populations, price signals, best responses.

Two sellers sit at the ends of the unit interval, S1 at 0 and S2 at 1.  A
consumer at ``x`` who sees prices ``(p1, p2)`` buys from S1 iff
``V1 - x t - p1 >= V2 - (1 - x) t - p2`` (ties go to S1).  Everything the
broker can do is summarised by a probability over the four price pairs for
each consumer type plus a fee schedule.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

EPS = 1e-9
MASS_TOL = 1e-12


class InvalidInput(ValueError):
    """Raised for parameters, populations or mechanisms that break invariants."""


class Variant(enum.Enum):
    ASYMMETRIC = "asymmetric"
    SYMMETRIC = "symmetric"


class Signal(enum.IntEnum):
    """Price pair recommended to (S1, S2).  Index order is the serialization order."""

    HH = 0
    HL = 1
    LH = 2
    LL = 3

    @property
    def labels(self) -> tuple[str, str]:
        return self.name[0], self.name[1]

    def prices(self, params: "MarketParams") -> tuple[float, float]:
        p = {"H": params.H, "L": params.L}
        return p[self.name[0]], p[self.name[1]]


SIGNALS = tuple(Signal)


@dataclass(frozen=True)
class MarketParams:
    V1: float
    V2: float
    t: float
    H: float
    L: float
    variant: Variant = Variant.ASYMMETRIC

    def __post_init__(self):
        for name in ("V1", "V2", "t", "H", "L"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise InvalidInput(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if not isinstance(self.variant, Variant):
            object.__setattr__(self, "variant", Variant(self.variant))
        if not self.L > 0:
            raise InvalidInput(f"L must be positive, got {self.L}")
        if not self.H > self.L:
            raise InvalidInput(f"H must exceed L, got H={self.H}, L={self.L}")
        if not self.t > 0:
            raise InvalidInput(f"t must be positive, got {self.t}")
        if self.variant is Variant.ASYMMETRIC:
            if abs(self.V2 - (self.V1 - self.t)) > 1e-9 * max(1.0, abs(self.V1)):
                raise InvalidInput("asymmetric variant needs V2 = V1 - t")
        elif self.V1 != self.V2:
            raise InvalidInput("symmetric variant needs V1 = V2")
        if not self.V - self.t - self.H > 0:
            raise InvalidInput("need V - t - H > 0 so every consumer buys")

    @classmethod
    def asymmetric(cls, V: float, t: float, H: float, L: float) -> "MarketParams":
        return cls(V, V - t, t, H, L, Variant.ASYMMETRIC)

    @classmethod
    def symmetric(cls, V: float, t: float, H: float, L: float) -> "MarketParams":
        return cls(V, V, t, H, L, Variant.SYMMETRIC)

    @property
    def V(self) -> float:
        return self.V1

    @property
    def is_asymmetric(self) -> bool:
        return self.variant is Variant.ASYMMETRIC

    def price(self, label) -> float:
        """Map 'H'/'L' (or a numeric price equal to H or L) to the price."""
        if isinstance(label, str):
            if label not in ("H", "L"):
                raise InvalidInput(f"price label must be 'H' or 'L', got {label!r}")
            return self.H if label == "H" else self.L
        value = float(label)
        if value not in (self.H, self.L):
            raise InvalidInput(f"price {value} is neither H nor L")
        return value

    def with_(self, **changes) -> "MarketParams":
        """Copy with some primitives replaced; V keeps V2 tied to V1 as the variant demands."""
        V = changes.pop("V", self.V1)
        t = changes.pop("t", self.t)
        H = changes.pop("H", self.H)
        L = changes.pop("L", self.L)
        if changes:
            raise InvalidInput(f"unknown parameters {sorted(changes)}")
        if self.is_asymmetric:
            return MarketParams.asymmetric(V, t, H, L)
        return MarketParams.symmetric(V, t, H, L)


@dataclass(frozen=True)
class Population:
    """Finite list of (location, mass) types, or the uniform distribution on [0, 1]."""

    locations: np.ndarray = field(default_factory=lambda: np.zeros(0))
    masses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    uniform: bool = False

    def __post_init__(self):
        xs = np.asarray(self.locations, dtype=float).reshape(-1)
        lam = np.asarray(self.masses, dtype=float).reshape(-1)
        object.__setattr__(self, "locations", xs)
        object.__setattr__(self, "masses", lam)
        if self.uniform:
            if xs.size:
                raise InvalidInput("a uniform population carries no explicit types")
            return
        if xs.size == 0:
            raise InvalidInput("population is empty")
        if xs.size != lam.size:
            raise InvalidInput("locations and masses differ in length")
        if np.any((xs < 0) | (xs > 1)) or not np.all(np.isfinite(xs)):
            raise InvalidInput("locations must lie in [0, 1]")
        if np.any(np.diff(xs) <= 0):
            raise InvalidInput("locations must be strictly increasing")
        if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
            raise InvalidInput("masses must be positive")
        if abs(lam.sum() - 1.0) > MASS_TOL:
            raise InvalidInput(f"masses must sum to 1, got {lam.sum():.12g}")

    @classmethod
    def discrete(cls, locations: Sequence[float], masses: Sequence[float]) -> "Population":
        return cls(np.asarray(locations, float), np.asarray(masses, float))

    @classmethod
    def uniform_line(cls) -> "Population":
        return cls(uniform=True)

    @property
    def size(self) -> int:
        return self.locations.size

    def index_of(self, x: float) -> int:
        hit = np.nonzero(np.abs(self.locations - x) <= 1e-12)[0]
        if hit.size == 0:
            raise InvalidInput(f"location {x} is not a type of this population")
        return int(hit[0])


def x_lower(params: MarketParams) -> float:
    """Location indifferent between S1 at H and S2 at L (asymmetric model), clamped."""
    return float(np.clip(1.0 - (params.H - params.L) / (2.0 * params.t), 0.0, 1.0))


def segment_boundaries(params: MarketParams) -> list[float]:
    if params.is_asymmetric:
        return [x_lower(params)]
    d = (params.H - params.L) / (2.0 * params.t)
    return [float(np.clip(v, 0.0, 1.0)) for v in (0.5 - d, 0.5, 0.5 + d)]


def segment_index(x: float, params: MarketParams) -> int:
    """0-based segment of ``x``; a boundary point belongs to the lower segment."""
    return int(sum(x > b for b in segment_boundaries(params)))


def uniform_grid(N: int, breakpoints: Sequence[float] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Midpoints and masses of N equal cells, with cells split at interior breakpoints."""
    if N < 2:
        raise InvalidInput("uniform grids need N >= 2")
    edges = list(np.linspace(0.0, 1.0, N + 1))
    for b in breakpoints:
        if 0.0 < b < 1.0 and min(abs(e - b) for e in edges) > 1e-12:
            edges.append(float(b))
    e = np.array(sorted(edges))
    return 0.5 * (e[:-1] + e[1:]), np.diff(e)


def discretize(population: Population, params: MarketParams, N: int = 50) -> Population:
    if not population.uniform:
        return population
    xs, lam = uniform_grid(N, segment_boundaries(params))
    return Population(xs, lam / lam.sum())


@dataclass(frozen=True)
class PurchaseOutcome:
    chosen_seller: int
    paid_price: float
    net_utility: float


def purchase(x: float, prices, params: MarketParams) -> PurchaseOutcome:
    """Best response of the consumer at ``x`` to ``prices`` (a Signal or a (p1, p2) pair)."""
    if not 0.0 <= x <= 1.0:
        raise InvalidInput(f"location {x} outside [0, 1]")
    p1, p2 = prices.prices(params) if isinstance(prices, Signal) else map(float, prices)
    u1 = params.V1 - x * params.t - p1
    u2 = params.V2 - (1.0 - x) * params.t - p2
    if u1 >= u2:
        return PurchaseOutcome(1, p1, u1)
    return PurchaseOutcome(2, p2, u2)


def buys_from_s1(x, p1, p2, params: MarketParams):
    """Vectorised purchase indicator (True = S1)."""
    x = np.asarray(x, dtype=float)
    return params.V1 - x * params.t - p1 >= params.V2 - (1.0 - x) * params.t - p2


def signal_tables(xs, params: MarketParams):
    """Per (type, signal) utility, S1 purchase flag, and price paid to each seller.

    Returns ``(u, to_s1, pay1, pay2)``, all shaped ``(len(xs), 4)``.
    """
    xs = np.asarray(xs, dtype=float).reshape(-1)
    n = xs.size
    u = np.empty((n, 4))
    to_s1 = np.empty((n, 4), dtype=bool)
    pay1 = np.zeros((n, 4))
    pay2 = np.zeros((n, 4))
    for s in SIGNALS:
        p1, p2 = s.prices(params)
        u1 = params.V1 - xs * params.t - p1
        u2 = params.V2 - (1.0 - xs) * params.t - p2
        b1 = u1 >= u2
        u[:, s] = np.where(b1, u1, u2)
        to_s1[:, s] = b1
        pay1[:, s] = np.where(b1, p1, 0.0)
        pay2[:, s] = np.where(b1, 0.0, p2)
    return u, to_s1, pay1, pay2


def obedience_coefficients(seller: int, recommended: float, deviation: float,
                           xs, params: MarketParams) -> np.ndarray:
    """Per (type, signal) gain from obeying, before weighting by mass and probability.

    Only signals recommending ``recommended`` to ``seller`` contribute; the
    purchase decision is re-evaluated at the deviated price.
    """
    if seller not in (1, 2):
        raise InvalidInput(f"seller must be 1 or 2, got {seller}")
    xs = np.asarray(xs, dtype=float).reshape(-1)
    out = np.zeros((xs.size, 4))
    for s in SIGNALS:
        p1, p2 = s.prices(params)
        own = p1 if seller == 1 else p2
        if own != recommended:
            continue
        if seller == 1:
            obey = np.where(buys_from_s1(xs, recommended, p2, params), recommended, 0.0)
            dev = np.where(buys_from_s1(xs, deviation, p2, params), deviation, 0.0)
        else:
            obey = np.where(buys_from_s1(xs, p1, recommended, params), 0.0, recommended)
            dev = np.where(buys_from_s1(xs, p1, deviation, params), 0.0, deviation)
        out[:, s] = obey - dev
    return out


@dataclass(frozen=True)
class Mechanism:
    """Signal probabilities (types x 4, ordered HH, HL, LH, LL), consumer and seller fees."""

    scheme: np.ndarray
    consumer_fees: np.ndarray
    seller_fees: tuple[float, float]

    def __post_init__(self):
        pi = np.atleast_2d(np.asarray(self.scheme, dtype=float))
        fees = np.asarray(self.consumer_fees, dtype=float).reshape(-1)
        if pi.shape[1] != 4 or pi.shape[0] != fees.size:
            raise InvalidInput("scheme must be (types, 4) and match the fee schedule")
        object.__setattr__(self, "scheme", pi)
        object.__setattr__(self, "consumer_fees", fees)
        object.__setattr__(self, "seller_fees", (float(self.seller_fees[0]), float(self.seller_fees[1])))

    def validate(self, tol: float = EPS) -> None:
        pi = self.scheme
        if np.any(pi < -tol) or np.any(pi > 1 + tol):
            raise InvalidInput("signal probabilities must lie in [0, 1]")
        if np.any(np.abs(pi.sum(axis=1) - 1.0) > tol):
            raise InvalidInput("signal probabilities must sum to 1 for every type")
        if np.any(self.consumer_fees < -tol) or min(self.seller_fees) < -tol:
            raise InvalidInput("fees must be nonnegative")

    @property
    def n_types(self) -> int:
        return self.consumer_fees.size


def _check_types(mech: Mechanism, population: Population) -> None:
    if population.uniform:
        raise InvalidInput("discretize the population before evaluating a mechanism")
    if mech.n_types != population.size:
        raise InvalidInput("mechanism and population have different numbers of types")


def misreport_utility(x: float, x_reported: float, mech: Mechanism,
                      population: Population, params: MarketParams) -> float:
    """Expected best-response utility at ``x`` under the reported type's signals, gross of fees."""
    _check_types(mech, population)
    j = population.index_of(x_reported)
    u, *_ = signal_tables([x], params)
    return float(u[0] @ mech.scheme[j])


def consumer_utilities(mech: Mechanism, population: Population, params: MarketParams) -> np.ndarray:
    """Gross truthful utility U(x_i) for every type."""
    _check_types(mech, population)
    u, *_ = signal_tables(population.locations, params)
    return np.einsum("is,is->i", u, mech.scheme)


def consumer_payoffs(mech: Mechanism, population: Population, params: MarketParams) -> np.ndarray:
    return consumer_utilities(mech, population, params) - mech.consumer_fees


def seller_expected_revenue(seller: int, mech: Mechanism, population: Population,
                            params: MarketParams) -> float:
    _check_types(mech, population)
    if seller not in (1, 2):
        raise InvalidInput(f"seller must be 1 or 2, got {seller}")
    _, _, pay1, pay2 = signal_tables(population.locations, params)
    pay = pay1 if seller == 1 else pay2
    return float(population.masses @ np.einsum("is,is->i", pay, mech.scheme))


def obedience_slack(seller: int, recommended, deviation, mech: Mechanism,
                    population: Population, params: MarketParams) -> float:
    """Obey revenue minus deviate revenue on the event the recommendation is sent."""
    _check_types(mech, population)
    rec, dev = params.price(recommended), params.price(deviation)
    if rec == dev:
        raise InvalidInput("recommended and deviation prices must differ")
    coef = obedience_coefficients(seller, rec, dev, population.locations, params)
    return float(population.masses @ np.einsum("is,is->i", coef, mech.scheme))


@dataclass(frozen=True)
class Violation:
    family: str
    label: str
    slack: float


@dataclass(frozen=True)
class FeasibilityAudit:
    """Slack of every constraint, recomputed from the purchase rule."""

    slacks: dict
    tolerance: float

    @property
    def violations(self) -> list[Violation]:
        out = []
        for (family, label), value in self.slacks.items():
            if value < -self.tolerance:
                out.append(Violation(family, label, value))
        return out

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def min_slack(self) -> float:
        return min(self.slacks.values(), default=float("inf"))


def audit_mechanism(mech: Mechanism, population: Population, params: MarketParams, *,
                    consumer_ic: bool = True, obedience: bool = True,
                    fee_nonneg: bool = True, tol: float = EPS) -> FeasibilityAudit:
    """Evaluate every constraint of the broker's problem from first principles."""
    _check_types(mech, population)
    xs, lam = population.locations, population.masses
    pi, fees = mech.scheme, mech.consumer_fees
    u, *_ = signal_tables(xs, params)
    slacks = {}
    for i in range(xs.size):
        for s in SIGNALS:
            slacks[("simplex", f"pi({s.name}|x{i + 1})>=0")] = pi[i, s]
        slacks[("simplex", f"sum pi(.|x{i + 1})=1")] = -abs(pi[i].sum() - 1.0)
    own = np.einsum("is,is->i", u, pi) - fees
    for i in range(xs.size):
        slacks[("consumerIR", f"x{i + 1}")] = own[i]
        if fee_nonneg:
            slacks[("fee", f"m_c(x{i + 1})>=0")] = fees[i]
    if consumer_ic:
        # cross[i, j] = utility of type i reporting j, net of j's fee
        cross = u @ pi.T - fees[None, :]
        for i in range(xs.size):
            for j in range(xs.size):
                if i != j:
                    slacks[("IC", f"x{i + 1}->x{j + 1}")] = own[i] - cross[i, j]
    if obedience:
        for seller in (1, 2):
            for rec, dev in (("H", "L"), ("L", "H")):
                slacks[("obedience", f"S{seller} {rec}->{dev}")] = obedience_slack(
                    seller, rec, dev, mech, population, params)
    for k in (1, 2):
        U = seller_expected_revenue(k, mech, population, params)
        m = mech.seller_fees[k - 1]
        slacks[("sellerIR", f"S{k}")] = U - m
        slacks[("sellerIR", f"m{k}>=0")] = m
    return FeasibilityAudit(slacks, tol)


def broker_revenue(mech: Mechanism, population: Population) -> float:
    return float(sum(mech.seller_fees) + population.masses @ mech.consumer_fees)
