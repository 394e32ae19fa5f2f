import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from canonical_lps import CASES
from infobroker import simplex
from infobroker.simplex import EQ, GE, LE, LinearProgram, Status, audit, row_slacks, solve


@pytest.mark.parametrize("name,program,status,value,point", CASES, ids=[c[0] for c in CASES])
def test_canonical(name, program, status, value, point):
    sol = solve(program)
    assert sol.status is status
    if status is Status.OPTIMAL:
        assert abs(sol.objective_value - value) <= 1e-9
        if point is not None:
            assert np.allclose(sol.primal, point, atol=1e-9)
        assert audit(program, sol.primal).feasible


def _vertex_optimum(c, A, b, box):
    """Best objective over all vertices of {A x <= b, 0 <= x <= box}."""
    n = c.size
    G = np.vstack([A, np.eye(n), -np.eye(n)])
    h = np.concatenate([b, np.full(n, box), np.zeros(n)])
    best = -np.inf
    for rows in itertools.combinations(range(G.shape[0]), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-7):
            best = max(best, float(c @ x))
    return best


@given(n=st.integers(1, 3), m=st.integers(1, 4), data=st.data())
def test_matches_vertex_enumeration(n, m, data):
    ints = st.integers(-5, 5)
    c = np.array(data.draw(st.lists(ints, min_size=n, max_size=n)), float)
    A = np.array(data.draw(st.lists(st.lists(ints, min_size=n, max_size=n), min_size=m, max_size=m)), float)
    b = np.array(data.draw(st.lists(st.integers(-3, 10), min_size=m, max_size=m)), float)
    box = 10.0
    program = LinearProgram.from_rows(c, [(A[i], LE, b[i]) for i in range(m)], [(0, box)] * n)
    expected = _vertex_optimum(c, A, b, box)
    sol = solve(program)
    if np.isfinite(expected):
        assert sol.status is Status.OPTIMAL
        assert abs(sol.objective_value - expected) <= 1e-7
        assert audit(program, sol.primal, tol=1e-7).feasible
    else:
        assert sol.status is Status.INFEASIBLE


@given(data=st.data())
def test_equality_and_ge_rows_agree_with_le_pairs(data):
    # x.a = b written as one equality or as <= and >= must give the same optimum
    n = 3
    c = np.array(data.draw(st.lists(st.integers(-4, 4), min_size=n, max_size=n)), float)
    a = np.array(data.draw(st.lists(st.integers(1, 4), min_size=n, max_size=n)), float)
    b = float(data.draw(st.integers(1, 8)))
    one = LinearProgram.from_rows(c, [(a, EQ, b)])
    two = LinearProgram.from_rows(c, [(a, LE, b), (a, GE, b)])
    s1, s2 = solve(one), solve(two)
    assert s1.status is s2.status is Status.OPTIMAL
    assert abs(s1.objective_value - s2.objective_value) <= 1e-9
    # the feasible set is a scaled simplex whose vertices are b/a_j e_j
    assert abs(s1.objective_value - max(c / a * b)) <= 1e-9


def test_infeasible_bounds_reported():
    program = LinearProgram.from_rows([1.0], [], [(2.0, 1.0)])
    assert solve(program).status is Status.INFEASIBLE


def test_iteration_cap_raises():
    program = CASES[0][1]
    with pytest.raises(simplex.SolverFailure):
        solve(program, max_iterations=0)


def test_audit_flags_violated_rows():
    program = CASES[0][1]
    report = audit(program, np.array([4.0, 6.0]))
    assert not report.feasible
    assert [r.name for r in report.violations] == ["r2"]
    assert report.slack_of("r2") == pytest.approx(-6.0)
    assert np.allclose(row_slacks(program, np.array([2.0, 6.0])), [2.0, 0.0, 0.0])


def test_equality_slack_is_minus_abs_residual():
    program = LinearProgram.from_rows([1.0, 1.0], [([1, 1], EQ, 1)])
    assert row_slacks(program, np.array([1.0, 1.0]))[0] == pytest.approx(-1.0)
    assert row_slacks(program, np.array([0.0, 0.0]))[0] == pytest.approx(-1.0)


def test_dump_lists_every_row_and_bound():
    program = LinearProgram.from_rows([1, 2], [([1, 1], LE, 3)], names=("a", "b"), row_names=("cap",))
    text = program.dump()
    assert "cap: +1 a +1 b <= 3" in text
    assert "  0 <= a <= inf" in text and "  0 <= b <= inf" in text


def test_validation():
    with pytest.raises(ValueError):
        LinearProgram.from_rows([1.0], [([1.0], "<", 1.0)])
    with pytest.raises(ValueError):
        LinearProgram.from_rows([1.0, 2.0], [([1.0], LE, 1.0)])
