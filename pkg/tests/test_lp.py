"""Simplex solver checks against an independent vertex-enumeration oracle.

The oracle solves small LPs by enumerating all basic solutions of the
constraint system (every choice of n active constraints from the pool of
inequality rows, equality rows, and sign constraints), keeping the
feasible ones, and taking the best objective.  No simplex machinery is
shared with the solver under test.
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltbounds.lp import LpResult, NumericalBreakdown, StandardFormLP, lp_solve


def vertex_enumeration_min(lp: StandardFormLP, tol: float = 1e-9):
    """Minimum of c.z over the polyhedron by brute-force vertex listing.

    Returns (status, objective).  Treats z >= 0 bounds as rows.  Only
    meant for n <= 6 and a handful of rows.
    """
    n = len(lp.c)
    rows = [(-np.eye(n)[i], 0.0) for i in range(n)]               # -z_i <= 0
    rows += [(lp.a_ub[i], float(lp.b_ub[i])) for i in range(len(lp.b_ub))]
    eqs = [(lp.a_eq[i], float(lp.b_eq[i])) for i in range(len(lp.b_eq))]

    def feasible(z):
        if (z < -tol).any():
            return False
        if len(lp.b_ub) and (lp.a_ub @ z > lp.b_ub + tol).any():
            return False
        if len(lp.b_eq) and np.abs(lp.a_eq @ z - lp.b_eq).max() > tol:
            return False
        return True

    best = np.inf
    found = False
    # every vertex is the intersection of n active constraints; equality
    # rows are always active, the rest come from the inequality pool
    need = n - len(eqs)
    if need < 0:
        return "infeasible", None
    for combo in itertools.combinations(range(len(rows)), need):
        a = np.array([eq[0] for eq in eqs] + [rows[i][0] for i in combo])
        b = np.array([eq[1] for eq in eqs] + [rows[i][1] for i in combo])
        if a.shape[0] != n:
            continue
        try:
            z = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            continue
        if feasible(z):
            found = True
            best = min(best, float(lp.c @ z))
    if not found:
        # could be infeasible or just vertex-free (e.g. unbounded empty
        # intersection); callers only use this on bounded problems
        return "infeasible", None
    return "optimal", best


def test_scalar_box():
    # max z (= min -z) subject to z <= 1
    lp = StandardFormLP.build(c=[-1.0], a_ub=[[1.0]], b_ub=[1.0])
    res = lp_solve(lp)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(-1.0, abs=1e-12)
    assert res.x[0] == pytest.approx(1.0, abs=1e-12)


def test_textbook_two_variable():
    # min -3x - 5y  s.t.  x <= 4, 2y <= 12, 3x + 2y <= 18
    lp = StandardFormLP.build(
        c=[-3.0, -5.0],
        a_ub=[[1.0, 0.0], [0.0, 2.0], [3.0, 2.0]],
        b_ub=[4.0, 12.0, 18.0],
    )
    res = lp_solve(lp)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(-36.0, abs=1e-9)
    np.testing.assert_allclose(res.x, [2.0, 6.0], atol=1e-9)


def test_equality_simplex_restriction():
    # min x0 on the probability simplex with x0 >= 0.25 forced by x1+x2 <= 0.75
    lp = StandardFormLP.build(
        c=[1.0, 0.0, 0.0],
        a_ub=[[0.0, 1.0, 1.0]],
        b_ub=[0.75],
        a_eq=[[1.0, 1.0, 1.0]],
        b_eq=[1.0],
    )
    res = lp_solve(lp)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(0.25, abs=1e-12)


def test_unbounded_detected():
    lp = StandardFormLP.build(c=[-1.0, 0.0], a_ub=[[0.0, 1.0]], b_ub=[1.0])
    res = lp_solve(lp)
    assert res.status == "unbounded"


def test_infeasible_certificate_identity():
    # x >= 2 (as -x <= -2) conflicts with x <= 1
    lp = StandardFormLP.build(c=[0.0], a_ub=[[-1.0], [1.0]], b_ub=[-2.0, 1.0])
    res = lp_solve(lp)
    assert res.status == "infeasible"
    cert = res.certificate
    u = np.asarray(cert["u_ub"])
    v = np.asarray(cert["v_eq"])
    # Farkas: u <= 0 on inequality rows, u'A_ub + v'A_eq <= 0, u'b + v'b > 0
    assert (u <= 1e-12).all()
    lhs = u @ lp.a_ub + (v @ lp.a_eq if len(v) else 0.0)
    assert np.max(lhs) <= 1e-9
    assert u @ lp.b_ub + (v @ lp.b_eq if len(v) else 0.0) > 1e-12


def test_infeasible_equality_certificate():
    # x0 + x1 = 3 cannot hold inside the unit box
    lp = StandardFormLP.build(
        c=[0.0, 0.0],
        a_ub=[[1.0, 0.0], [0.0, 1.0]],
        b_ub=[1.0, 1.0],
        a_eq=[[1.0, 1.0]],
        b_eq=[3.0],
    )
    res = lp_solve(lp)
    assert res.status == "infeasible"
    u = np.asarray(res.certificate["u_ub"])
    v = np.asarray(res.certificate["v_eq"])
    assert (u <= 1e-12).all()
    lhs = u @ lp.a_ub + v @ lp.a_eq
    assert np.max(lhs) <= 1e-9
    assert u @ lp.b_ub + v @ lp.b_eq > 1e-12


def _random_bounded_lp(rng, n, m_ub, m_eq):
    """Random LP kept bounded by a box row sum(z) <= span."""
    c = rng.normal(size=n)
    a_ub = rng.normal(size=(m_ub, n))
    # anchor feasibility at a random nonneg point
    z0 = rng.uniform(0.0, 1.0, size=n)
    b_ub = a_ub @ z0 + rng.uniform(0.05, 1.0, size=m_ub)
    a_ub = np.vstack([a_ub, np.ones(n)])
    b_ub = np.append(b_ub, z0.sum() + 1.0)
    if m_eq:
        a_eq = rng.normal(size=(m_eq, n))
        b_eq = a_eq @ z0
    else:
        a_eq = b_eq = None
    return StandardFormLP.build(c=c, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq)


@pytest.mark.parametrize("n,m_ub,m_eq", [(2, 2, 0), (3, 3, 1), (4, 2, 1), (5, 3, 2), (6, 4, 0)])
def test_matches_vertex_enumeration(n, m_ub, m_eq):
    rng = np.random.default_rng(100 * n + m_ub)
    for rep in range(12):
        lp = _random_bounded_lp(rng, n, m_ub, m_eq)
        res = lp_solve(lp)
        status, obj = vertex_enumeration_min(lp)
        assert res.status == status == "optimal"
        assert res.objective == pytest.approx(obj, abs=1e-9)


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=40, deadline=None)
def test_optimal_solution_is_feasible(seed):
    rng = np.random.default_rng(seed)
    lp = _random_bounded_lp(rng, 4, 3, 1)
    res = lp_solve(lp)
    assert res.status == "optimal"
    z = res.x
    assert z.min() >= -1e-9
    assert (lp.a_ub @ z <= lp.b_ub + 1e-8).all()
    assert np.abs(lp.a_eq @ z - lp.b_eq).max() <= 1e-8
    assert res.objective == pytest.approx(float(lp.c @ z), abs=1e-9)


def test_duplicate_rows_no_cycling():
    # degenerate problem with repeated rows; Bland's rule must terminate
    row = [1.0, 1.0, 1.0]
    lp = StandardFormLP.build(
        c=[-1.0, -2.0, -3.0],
        a_ub=[row, row, row, [1.0, 0.0, 0.0]],
        b_ub=[1.0, 1.0, 1.0, 0.5],
    )
    res = lp_solve(lp)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(-3.0, abs=1e-9)


def test_pivot_budget_enforced():
    rng = np.random.default_rng(7)
    lp = _random_bounded_lp(rng, 6, 4, 0)
    with pytest.raises(NumericalBreakdown):
        lp_solve(lp, max_pivots=1)
