"""Dense two-phase primal simplex with Bland's rule.

Small, self-contained LP engine used by the broker's program oracle.  The
programs it sees have at most a few thousand rows, so a dense tableau is
fine and keeps the pivoting logic easy to audit.

Problems are stated as *maximization*::

    maximize    c @ x
    subject to  A[i] @ x  (<=, >=, =)  b[i]
                lower <= x <= upper
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PIVOT_TOL = 1e-10
FEAS_TOL = 1e-9
ZERO_TOL = 1e-12
DEGENERATE_SWITCH = 200
MAX_ITERATIONS = 50_000

LE, GE, EQ = "<=", ">=", "="
_SENSES = (LE, GE, EQ)


class SolverFailure(RuntimeError):
    """The simplex iteration cap was exceeded."""


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LinearProgram:
    objective: np.ndarray
    A: np.ndarray
    senses: tuple[str, ...]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] = ()
    row_names: tuple[str, ...] = ()

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float)
        A = np.asarray(self.A, dtype=float).reshape(-1, c.size)
        n = c.size
        if n == 0:
            raise ValueError("a linear program needs at least one variable")
        rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        if A.shape[0] != rhs.size or len(self.senses) != rhs.size:
            raise ValueError("constraint rows, senses and rhs disagree in length")
        if not np.all(np.isfinite(rhs)):
            raise ValueError("rhs must be finite")
        bad = [s for s in self.senses if s not in _SENSES]
        if bad:
            raise ValueError(f"unknown constraint relation {bad[0]!r}")
        lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        names = tuple(self.names) or tuple(f"x{j}" for j in range(n))
        row_names = tuple(self.row_names) or tuple(f"r{i}" for i in range(rhs.size))
        if len(names) != n or len(row_names) != rhs.size:
            raise ValueError("names do not match the program dimensions")
        for attr, value in (("objective", c), ("A", A), ("rhs", rhs), ("lower", lower),
                            ("upper", upper), ("names", names), ("row_names", row_names)):
            object.__setattr__(self, attr, value)
        object.__setattr__(self, "senses", tuple(self.senses))

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size

    @classmethod
    def from_rows(cls, objective, rows, bounds=None, names=(), row_names=()):
        """Build from ``[(coeffs, relation, rhs), ...]`` and ``[(lo, hi), ...]``."""
        c = np.asarray(objective, dtype=float)
        n = c.size
        if any(len(coeffs) != n for coeffs, _, _ in rows):
            raise ValueError("every constraint row must have the objective's width")
        A = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), n)
        senses = tuple(r[1] for r in rows)
        rhs = np.array([r[2] for r in rows], dtype=float)
        if bounds is None:
            bounds = [(0.0, np.inf)] * n
        lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds], dtype=float)
        hi = np.array([np.inf if b[1] is None else b[1] for b in bounds], dtype=float)
        return cls(c, A, senses, rhs, lo, hi, tuple(names), tuple(row_names))

    def dump(self) -> str:
        """Human-readable listing, one constraint per line."""
        def term_list(coeffs):
            parts = [f"{v:+.9g} {self.names[j]}" for j, v in enumerate(coeffs) if v != 0.0]
            return " ".join(parts) if parts else "0"

        lines = ["maximize " + term_list(self.objective), "subject to"]
        for i in range(self.n_rows):
            lines.append(f"  {self.row_names[i]}: {term_list(self.A[i])} "
                         f"{self.senses[i]} {self.rhs[i]:.9g}")
        lines.append("bounds")
        for j in range(self.n_vars):
            lines.append(f"  {self.lower[j]:.9g} <= {self.names[j]} <= {self.upper[j]:.9g}")
        return "\n".join(lines)


@dataclass
class StandardForm:
    """``maximize c @ z  s.t.  A z = b,  z >= 0`` with ``b >= 0``.

    Original variables are recovered as ``x = offset + T @ z[:n_structural]``.
    ``n_structural`` counts the columns that come from original variables;
    the remaining columns are slacks/surpluses.  ``basis_hint[i]`` is a column
    that is a unit vector in row ``i`` (a usable starting basic column), or -1.
    """

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    T: np.ndarray
    offset: np.ndarray
    n_structural: int
    basis_hint: np.ndarray
    objective_offset: float
    infeasible_bounds: bool = False

    def recover(self, z: np.ndarray) -> np.ndarray:
        return self.offset + self.T @ z[: self.n_structural]


def to_standard_form(lp: LinearProgram) -> StandardForm:
    n = lp.n_vars
    cols = []        # (original var, sign) per structural column
    offset = np.zeros(n)
    extra_rows = []  # (structural col, upper bound) from doubly bounded vars
    bad_bounds = bool(np.any(lp.lower > lp.upper))
    for j in range(n):
        lo, hi = lp.lower[j], lp.upper[j]
        if np.isfinite(lo):
            offset[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    n_struct = len(cols)
    T = np.zeros((n, n_struct))
    for k, (j, s) in enumerate(cols):
        T[j, k] = s

    A_struct = lp.A @ T
    b = lp.rhs - lp.A @ offset
    senses = list(lp.senses)
    if extra_rows:
        ub = np.zeros((len(extra_rows), n_struct))
        for r, (k, width) in enumerate(extra_rows):
            ub[r, k] = 1.0
        A_struct = np.vstack([A_struct, ub])
        b = np.concatenate([b, [w for _, w in extra_rows]])
        senses += [LE] * len(extra_rows)

    # equilibrate rows so pivot tolerances mean the same thing everywhere
    scale = np.abs(A_struct).max(axis=1, initial=0.0)
    scale[scale == 0.0] = 1.0
    A_struct = A_struct / scale[:, None]
    b = b / scale

    m = b.size
    n_slack = sum(1 for s in senses if s != EQ)
    A = np.zeros((m, n_struct + n_slack))
    A[:, :n_struct] = A_struct
    hint = np.full(m, -1, dtype=int)
    k = n_struct
    for i, s in enumerate(senses):
        if s == EQ:
            continue
        A[i, k] = 1.0 if s == LE else -1.0
        k += 1
    # flip rows with negative rhs, and zero-rhs rows whose slack enters with
    # -1, so that as many rows as possible start with a unit slack column
    neg = b < 0
    k = n_struct
    for i, s in enumerate(senses):
        if s == EQ:
            continue
        if b[i] == 0.0 and A[i, k] == -1.0:
            neg[i] = True
        k += 1
    A[neg] *= -1.0
    b = np.where(neg, -b, b)
    k = n_struct
    for i, s in enumerate(senses):
        if s == EQ:
            continue
        if A[i, k] == 1.0:
            hint[i] = k
        k += 1

    c = np.zeros(A.shape[1])
    c[:n_struct] = lp.objective @ T
    return StandardForm(c=c, A=A, b=b, T=T, offset=offset, n_structural=n_struct,
                        basis_hint=hint, objective_offset=float(lp.objective @ offset),
                        infeasible_bounds=bad_bounds)


@dataclass
class SimplexSolution:
    status: Status
    objective_value: float
    primal: np.ndarray
    iterations: int
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


class _Tableau:
    """Constraint rows first, then one reduced-cost row per objective.

    The last column holds the rhs.  Reduced-cost rows are eliminated along
    with the constraint rows, so pricing is a row read rather than a product.
    """

    def __init__(self, A, b, basis, objectives):
        m, n = A.shape
        self.m = m
        self.T = np.zeros((m + len(objectives), n + 1))
        self.T[:m, :n] = A
        self.T[:m, n] = b
        self.basis = np.asarray(basis, dtype=int)
        for k, c in enumerate(objectives):
            self.T[m + k, :n] = c - c[self.basis] @ A
        self.iterations = 0

    @property
    def rhs(self):
        return self.T[: self.m, -1]

    def pivot(self, r, col):
        T = self.T
        T[r] /= T[r, col]
        colv = T[:, col].copy()
        colv[r] = 0.0
        nz = np.nonzero(colv)[0]
        if nz.size:
            block = T[nz] - np.outer(colv[nz], T[r])
            # flush round-off so degenerate rows do not pick up phantom pivots
            block[np.abs(block) < ZERO_TOL] = 0.0
            block[:, col] = 0.0
            T[nz] = block
        self.basis[r] = col
        self.iterations += 1

    def drop_rows(self, keep):
        self.T = np.vstack([self.T[: self.m][keep], self.T[self.m:]])
        self.basis = self.basis[keep]
        self.m = int(keep.sum())

    def run(self, k, allowed, budget):
        """Primal simplex on reduced-cost row ``k``; 'optimal' or 'unbounded'.

        Entering column: lowest index with positive reduced cost (Bland).
        Leaving row: two-pass ratio test, largest pivot among rows within the
        feasibility tolerance of the minimum ratio.  After a long run of
        degenerate pivots the leaving choice reverts to the textbook rule
        (exact minimum ratio, lowest basic index), which cannot cycle.
        """
        degenerate_run = 0
        while True:
            if self.iterations >= budget:
                raise SolverFailure(f"simplex exceeded {budget} iterations")
            d = self.T[self.m + k, :-1]
            cand = np.nonzero((d > PIVOT_TOL) & allowed)[0]
            if cand.size == 0:
                return "optimal"
            col = int(cand[0])
            a = self.T[: self.m, col]
            pos = np.nonzero(a > PIVOT_TOL)[0]
            if pos.size == 0:
                return "unbounded"
            rhs = np.maximum(self.rhs[pos], 0.0)
            ap = a[pos]
            ratio = rhs / ap
            if degenerate_run < DEGENERATE_SWITCH:
                theta = ((rhs + FEAS_TOL) / ap).min()
                rows, piv = pos[ratio <= theta], ap[ratio <= theta]
                rows = rows[piv >= piv.max() * (1.0 - 1e-9)]
            else:
                rows = pos[ratio <= ratio.min()]
            r = int(rows[np.argmin(self.basis[rows])])
            degenerate_run = degenerate_run + 1 if self.rhs[r] <= FEAS_TOL else 0
            self.pivot(r, col)


def _refine(A, b, basis, n):
    """Recompute basic values from the original rows; None if that fails."""
    B = A[:, basis]
    try:
        xb = np.linalg.solve(B, b)
    except np.linalg.LinAlgError:
        return None
    z = np.zeros(n)
    z[basis] = xb
    return z


def _solve_standard(sf: StandardForm, max_iterations: int):
    m, n = sf.A.shape
    basis = sf.basis_hint.copy()
    art_rows = np.nonzero(basis < 0)[0]
    n_art = art_rows.size
    A = np.zeros((m, n + n_art))
    A[:, :n] = sf.A
    for k, i in enumerate(art_rows):
        A[i, n + k] = 1.0
        basis[i] = n + k
    c1 = np.zeros(n + n_art)
    c1[n:] = -1.0
    c2 = np.zeros(n + n_art)
    c2[:n] = sf.c
    tab = _Tableau(A, sf.b, basis, [c1, c2])
    allowed = np.ones(n + n_art, dtype=bool)
    kept = np.ones(m, dtype=bool)

    if n_art:
        tab.run(0, allowed, max_iterations)
        infeas = -(c1[tab.basis] @ tab.rhs)
        if infeas > FEAS_TOL * max(1.0, float(np.abs(sf.b).max(initial=0.0))):
            return Status.INFEASIBLE, None, tab.iterations
        # drive zero-level artificials out of the basis; rows that cannot be
        # cleared are redundant and dropped
        keep = np.ones(tab.m, dtype=bool)
        for r in range(tab.m):
            if tab.basis[r] >= n:
                row = tab.T[r, :n]
                cand = np.nonzero(np.abs(row) > PIVOT_TOL)[0]
                if cand.size:
                    tab.pivot(r, int(cand[np.argmax(np.abs(row[cand]))]))
                else:
                    keep[r] = False
        if not keep.all():
            rows = np.nonzero(kept)[0]
            kept[rows[~keep]] = False
            tab.drop_rows(keep)
        allowed[n:] = False

    outcome = tab.run(1, allowed, max_iterations)
    if outcome == "unbounded":
        return Status.UNBOUNDED, None, tab.iterations
    z = np.zeros(n + n_art)
    z[tab.basis] = tab.rhs
    z = z[:n]
    if np.all(tab.basis < n):
        fine = _refine(sf.A[kept], sf.b[kept], tab.basis, n)
        if fine is not None and fine.min() >= -FEAS_TOL:
            z = np.maximum(fine, 0.0)
    return Status.OPTIMAL, z, tab.iterations


def solve(lp: LinearProgram, max_iterations: int = MAX_ITERATIONS) -> SimplexSolution:
    """Maximize ``lp``.  Infeasible/Unbounded are statuses, not exceptions."""
    sf = to_standard_form(lp)
    nan = np.full(lp.n_vars, np.nan)
    if sf.infeasible_bounds:
        return SimplexSolution(Status.INFEASIBLE, float("nan"), nan, 0)
    status, z, iters = _solve_standard(sf, max_iterations)
    if status is not Status.OPTIMAL:
        value = float("inf") if status is Status.UNBOUNDED else float("nan")
        return SimplexSolution(status, value, nan, iters)
    x = sf.recover(z)
    # snap to bounds: pivoting noise must not leave x outside its box
    x = np.minimum(np.maximum(x, lp.lower), lp.upper)
    return SimplexSolution(Status.OPTIMAL, float(lp.objective @ x), x, iters)


@dataclass
class AuditRecord:
    name: str
    kind: str       # "row" or "bound"
    slack: float    # >= 0 when satisfied
    violated: bool


@dataclass
class AuditReport:
    records: list[AuditRecord]
    tolerance: float

    @property
    def violations(self) -> list[AuditRecord]:
        return [r for r in self.records if r.violated]

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def min_slack(self) -> float:
        return min((r.slack for r in self.records), default=float("inf"))

    def slack_of(self, name: str) -> float:
        for r in self.records:
            if r.name == name:
                return r.slack
        raise KeyError(name)


def row_slacks(lp: LinearProgram, point: np.ndarray) -> np.ndarray:
    """Signed slack of every row (>= 0 satisfied; equality rows give -|residual|)."""
    act = lp.A @ point
    out = np.empty(lp.n_rows)
    for i, s in enumerate(lp.senses):
        if s == LE:
            out[i] = lp.rhs[i] - act[i]
        elif s == GE:
            out[i] = act[i] - lp.rhs[i]
        else:
            out[i] = -abs(act[i] - lp.rhs[i])
    return out


def audit(lp: LinearProgram, point: Sequence[float], tol: float = FEAS_TOL) -> AuditReport:
    x = np.asarray(point, dtype=float)
    if x.shape != (lp.n_vars,):
        raise ValueError(f"point has shape {x.shape}, program has {lp.n_vars} variables")
    records = []
    for i, sl in enumerate(row_slacks(lp, x)):
        records.append(AuditRecord(lp.row_names[i], "row", float(sl), bool(sl < -tol)))
    for j in range(lp.n_vars):
        if np.isfinite(lp.lower[j]):
            sl = x[j] - lp.lower[j]
            records.append(AuditRecord(f"{lp.names[j]}>=lo", "bound", float(sl), bool(sl < -tol)))
        if np.isfinite(lp.upper[j]):
            sl = lp.upper[j] - x[j]
            records.append(AuditRecord(f"{lp.names[j]}<=hi", "bound", float(sl), bool(sl < -tol)))
    return AuditReport(records, tol)
