"""Dense two-phase simplex for the small LPs arising in bound computation.

Problems here have at most a few hundred variables (16 masses per block
plus slacks), so a dense float64 tableau with Bland's anti-cycling rule
is simpler and more predictable than anything sparse or interior-point.
Canonical form: minimize c.z subject to A_ub z <= b_ub, A_eq z = b_eq,
z >= 0.

On infeasibility the phase-1 optimum yields a Farkas certificate
(u on inequality rows with u <= 0, v free on equality rows) satisfying
u'A_ub + v'A_eq <= 0 componentwise and u'b_ub + v'b_eq > 0; tests verify
this identity directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

DEFAULT_TOL = 1e-9
PIVOT_FLOOR = 1e-11


class NumericalBreakdown(Exception):
    pass


@dataclass(frozen=True)
class StandardFormLP:
    """minimize c.z  s.t.  a_ub z <= b_ub,  a_eq z = b_eq,  z >= 0."""

    c: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray

    @classmethod
    def build(cls, c, a_ub=None, b_ub=None, a_eq=None, b_eq=None) -> "StandardFormLP":
        c = np.asarray(c, dtype=float)
        n = len(c)
        if a_ub is None:
            a_ub = np.zeros((0, n))
            b_ub = np.zeros(0)
        if a_eq is None:
            a_eq = np.zeros((0, n))
            b_eq = np.zeros(0)
        return cls(c=c, a_ub=np.asarray(a_ub, dtype=float),
                   b_ub=np.asarray(b_ub, dtype=float),
                   a_eq=np.asarray(a_eq, dtype=float),
                   b_eq=np.asarray(b_eq, dtype=float))


@dataclass
class LpResult:
    status: str                      # "optimal" | "infeasible" | "unbounded"
    objective: Optional[float]
    x: Optional[np.ndarray]
    certificate: Optional[dict]      # Farkas multipliers when infeasible
    n_pivots: int


def _bland_entering(obj_row: np.ndarray, ncols: int, tol: float) -> int:
    for j in range(ncols):
        if obj_row[j] < -tol:
            return j
    return -1


def _leaving_row(T: np.ndarray, basis, m: int, col: int, tol: float) -> int:
    best_row = -1
    best_ratio = np.inf
    best_basic = -1
    for i in range(m):
        a = T[i, col]
        if a > tol:
            ratio = T[i, -1] / a
            # Bland: smallest ratio, ties broken by smallest basic index
            if ratio < best_ratio - 1e-15 or (abs(ratio - best_ratio) <= 1e-15
                                              and basis[i] < best_basic):
                best_ratio = ratio
                best_row = i
                best_basic = basis[i]
    return best_row


def _pivot(T: np.ndarray, basis, row: int, col: int):
    piv = T[row, col]
    if abs(piv) < PIVOT_FLOOR:
        raise NumericalBreakdown(f"pivot {piv:.3e} below floor at ({row},{col})")
    T[row] /= piv
    colvals = T[:, col].copy()
    colvals[row] = 0.0
    T -= np.outer(colvals, T[row])
    # outer-product update smears roundoff into the pivot column; make it exact
    T[:, col] = 0.0
    T[row, col] = 1.0
    basis[row] = col


def lp_solve(lp: StandardFormLP, tol: float = DEFAULT_TOL,
             max_pivots: int = 200000) -> LpResult:
    """Solve a standard-form LP with the two-phase dense simplex.

    Returns an optimal basic solution, an infeasibility certificate, or
    an "unbounded" status.  Raises NumericalBreakdown on a degenerate
    pivot or pivot-count blowout.
    """
    n = len(lp.c)
    m_ub, m_eq = len(lp.b_ub), len(lp.b_eq)
    m = m_ub + m_eq

    A = np.zeros((m, n + m_ub))
    if m_ub:
        A[:m_ub, :n] = lp.a_ub
        A[:m_ub, n:] = np.eye(m_ub)
    if m_eq:
        A[m_ub:, :n] = lp.a_eq
    b = np.concatenate([lp.b_ub, lp.b_eq]).astype(float)

    sign = np.ones(m)
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    sign[neg] = -1.0

    ncols = n + m_ub
    # rows that can start with their slack in the basis need no artificial
    needs_art = [i for i in range(m) if not (i < m_ub and sign[i] > 0)]
    n_art = len(needs_art)
    art_of_row = {row: ncols + k for k, row in enumerate(needs_art)}

    width = ncols + n_art + 1
    T = np.zeros((m + 2, width))
    T[:m, :ncols] = A
    T[:m, -1] = b
    basis = [0] * m
    for i in range(m):
        if i in art_of_row:
            T[i, art_of_row[i]] = 1.0
            basis[i] = art_of_row[i]
        else:
            basis[i] = n + i

    OBJ, AUX = m, m + 1
    T[OBJ, :n] = lp.c
    for k in range(n_art):
        T[AUX, ncols + k] = 1.0
    for i in range(m):
        for obj in (OBJ, AUX):
            coef = T[obj, basis[i]]
            if coef != 0.0:
                T[obj] -= coef * T[i]

    n_pivots = 0

    def run_phase(obj_row: int, allowed: int) -> str:
        nonlocal n_pivots
        while True:
            col = _bland_entering(T[obj_row], allowed, tol)
            if col < 0:
                return "optimal"
            row = _leaving_row(T, basis, m, col, tol)
            if row < 0:
                return "unbounded"
            _pivot(T, basis, row, col)
            n_pivots += 1
            if n_pivots > max_pivots:
                raise NumericalBreakdown(f"pivot budget {max_pivots} exhausted")

    if n_art:
        status = run_phase(AUX, ncols)
        if status != "optimal":
            raise NumericalBreakdown("phase-1 reported unbounded")
        phase1_val = -T[AUX, -1]
        if phase1_val > max(tol, 1e-8):
            y = np.empty(m)
            for i in range(m):
                if i in art_of_row:
                    y[i] = 1.0 - T[AUX, art_of_row[i]]
                else:
                    y[i] = -T[AUX, n + i]
            mult = sign * y
            cert = {"u_ub": mult[:m_ub].tolist(), "v_eq": mult[m_ub:].tolist(),
                    "phase1_objective": float(phase1_val)}
            return LpResult(status="infeasible", objective=None, x=None,
                            certificate=cert, n_pivots=n_pivots)
        # drive surviving artificial basics out where possible
        for i in range(m):
            if basis[i] >= ncols:
                for j in range(ncols):
                    if abs(T[i, j]) > tol:
                        _pivot(T, basis, i, j)
                        n_pivots += 1
                        break

    status = run_phase(OBJ, ncols)
    if status == "unbounded":
        return LpResult(status="unbounded", objective=None, x=None,
                        certificate=None, n_pivots=n_pivots)

    z = np.zeros(ncols)
    for i in range(m):
        if basis[i] < ncols:
            z[basis[i]] = T[i, -1]
    if not np.isfinite(T[OBJ, -1]):
        raise NumericalBreakdown("non-finite objective in final tableau")
    return LpResult(status="optimal", objective=float(-T[OBJ, -1]),
                    x=z[:n], certificate=None, n_pivots=n_pivots)
