"""Sharp-set bound solver: Charnes-Cooper LPs plus ratio profiling.

Each direction of the linear-fractional objective becomes one LP after
the Charnes-Cooper change of variables p = t q, t = 1/(denominator), so
a purely linear restriction set costs exactly two simplex solves.
Bilinear restrictions enter through shared conditional ratios; ratios
pinned by data become linear rows, the remaining free ratios are
profiled on a uniform [0,1] grid (envelope over grid points), and a
multi-start coordinate search takes over when the free dimension exceeds
the configured cap.  When the uniform grid finds no feasible point the
solver re-profiles over each free ratio's attainable interval, computed
by two more Charnes-Cooper solves, so a point-identified conditional
that falls between grid nodes does not masquerade as a contradiction.
"""

from __future__ import annotations

import itertools
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .closed_form import BoundsResult, _informative
from .lp import LpResult, NumericalBreakdown, StandardFormLP, lp_solve
from .qspace import BilinearRatio, Program, SolverOptions, ratio_rows

# survivor mass below this at an optimum means the bound is a closure
# limit rather than an attained value
SURVIVOR_FLOOR = 1e-9
BINDING_TOL = 1e-7


class Infeasible(Exception):
    def __init__(self, message: str, certificate: Optional[dict] = None):
        super().__init__(message)
        self.certificate = certificate or {}


class DenominatorVanishes(Exception):
    pass


def _realized_rows(program: Program, values: dict):
    """Linear rows for every bilinear ratio, pinned or profiled."""
    eqs, eq_labels, ineqs, in_labels = [], [], [], []
    for idx, ratio in enumerate(program.bilinear):
        value = ratio.pinned_value if ratio.pinned_value is not None else values[idx]
        e, el, i, il = ratio_rows(program, ratio, value)
        eqs += e
        eq_labels += el
        ineqs += i
        in_labels += il
    return eqs, eq_labels, ineqs, in_labels


def _qspace_feasibility(program: Program, eq_extra, ineq_extra) -> LpResult:
    n = program.n_vars
    a_eq = [program.simplex_a, program.eq_a] + ([np.array(eq_extra)] if eq_extra else [])
    a_eq = np.vstack([a for a in a_eq if len(a)])
    b_eq = np.concatenate([np.ones(len(program.simplex_a)),
                           np.zeros(len(program.eq_a)),
                           np.zeros(len(eq_extra))])
    a_ub = [program.ineq_a] + ([np.array(ineq_extra)] if ineq_extra else [])
    a_ub = np.vstack([a for a in a_ub if len(a)]) if any(len(a) for a in a_ub) else None
    b_ub = np.concatenate([program.ineq_b, np.zeros(len(ineq_extra))]) if a_ub is not None else None
    lp = StandardFormLP.build(c=np.zeros(n), a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq)
    return lp_solve(lp)


def _solve_direction(program: Program, eq_extra, ineq_extra, maximize: bool,
                     tol: float, num: Optional[np.ndarray] = None,
                     den: Optional[np.ndarray] = None):
    """One Charnes-Cooper LP; returns (phi, q, survivor_mass) or a status.

    ``num`` and ``den`` override the program objective; the ratio-range
    probes reuse the transform with a conditional's own mass rows.
    """
    n = program.n_vars
    ncc = n + 1          # trailing variable is t
    num = program.objective_num if num is None else num
    den = program.objective_den if den is None else den

    rows_eq, b_eq = [], []
    for row in program.simplex_a:
        r = np.zeros(ncc)
        r[:n] = row
        r[n] = -1.0
        rows_eq.append(r)
        b_eq.append(0.0)
    for row in program.eq_a:
        r = np.zeros(ncc)
        r[:n] = row
        rows_eq.append(r)
        b_eq.append(0.0)
    for row in eq_extra:
        r = np.zeros(ncc)
        r[:n] = row
        rows_eq.append(r)
        b_eq.append(0.0)
    den_row = np.zeros(ncc)
    den_row[:n] = den
    rows_eq.append(den_row)
    b_eq.append(1.0)

    rows_ub, b_ub = [], []
    for row, rhs in zip(program.ineq_a, program.ineq_b):
        r = np.zeros(ncc)
        r[:n] = row
        r[n] = -rhs
        rows_ub.append(r)
        b_ub.append(0.0)
    for row in ineq_extra:
        r = np.zeros(ncc)
        r[:n] = row
        rows_ub.append(r)
        b_ub.append(0.0)

    c = np.zeros(ncc)
    c[:n] = -num if maximize else num

    lp = StandardFormLP.build(c=c,
                              a_ub=np.array(rows_ub) if rows_ub else None,
                              b_ub=np.array(b_ub) if rows_ub else None,
                              a_eq=np.array(rows_eq), b_eq=np.array(b_eq))
    res = lp_solve(lp, tol=tol)
    if res.status == "infeasible":
        return ("cc_infeasible", res)
    if res.status == "unbounded":
        raise NumericalBreakdown("Charnes-Cooper LP reported unbounded; "
                                 "the objective is bounded by construction")
    t = res.x[n]
    phi = -res.objective if maximize else res.objective
    if t <= SURVIVOR_FLOOR:
        # optimum pushed t toward 0, i.e. infinite scaling; treat as closure
        return ("closure", phi)
    q = res.x[:n] / t
    survivor = 1.0 / t
    return ("ok", phi, q, survivor)


def _binding_labels(program: Program, q: np.ndarray, ineq_extra, in_labels_extra):
    labels = []
    for row, rhs, label in zip(program.ineq_a, program.ineq_b, program.ineq_labels):
        if abs(float(row @ q) - rhs) <= BINDING_TOL:
            labels.append(label)
    for row, label in zip(ineq_extra, in_labels_extra):
        if abs(float(row @ q)) <= BINDING_TOL:
            labels.append(label)
    return labels


def _grid_values(free_count: int, grid_points: int):
    axis = np.linspace(0.0, 1.0, grid_points)
    return itertools.product(*([axis] * free_count))


def _pinned_rows(program: Program):
    """Realized rows for the data-pinned ratios only."""
    eqs, ineqs = [], []
    for ratio in program.bilinear:
        if ratio.pinned_value is None:
            continue
        e, _, i, _ = ratio_rows(program, ratio, ratio.pinned_value)
        eqs += e
        ineqs += i
    return eqs, ineqs


def _ratio_range(program: Program, ratio: BilinearRatio, opts: SolverOptions):
    """Attainable interval of one free ratio over the linear polytope.

    The realized equality row is affine in the profiled value, so its
    numerator and denominator rows fall out of evaluations at 0 and 1
    and the interval comes from two Charnes-Cooper solves.  Other free
    ratios are relaxed away, which makes the interval a superset of the
    jointly feasible values.  Returns None when the conditioning mass is
    zero at every feasible point (the equality row is then vacuous) or
    when the polytope itself is empty.
    """
    eq0 = ratio_rows(program, ratio, 0.0)[0]
    eq1 = ratio_rows(program, ratio, 1.0)[0]
    num = np.asarray(eq0[0], dtype=float)
    den = num - np.asarray(eq1[0], dtype=float)
    eqs, ineqs = _pinned_rows(program)
    ends = []
    for maximize in (False, True):
        res = _solve_direction(program, eqs, ineqs, maximize=maximize,
                               tol=opts.lp_tol, num=num, den=den)
        if res[0] == "cc_infeasible":
            return None
        ends.append(float(res[1]))
    return min(ends), max(ends)


def _refined_axes(program: Program, opts: SolverOptions, free_idx):
    """Per-ratio grids over the attainable intervals.

    Interval endpoints are skipped: a ratio at its extreme value tends to
    force a degenerate q (zero survivor mass), so the retry samples the
    open interval.  Returns None when no interval narrows on [0,1]; a
    retry would then just repeat the uniform grid.
    """
    base = np.linspace(0.0, 1.0, opts.grid_points)
    axes, narrowed = [], False
    for i in free_idx:
        span = _ratio_range(program, program.bilinear[i], opts)
        if span is None:
            axes.append(base)
            continue
        lo = max(span[0], 0.0)
        hi = min(span[1], 1.0)
        if lo <= 1e-9 and hi >= 1.0 - 1e-9:
            axes.append(base)
            continue
        narrowed = True
        if hi - lo <= 1e-12:
            axes.append(np.array([0.5 * (lo + hi)]))
        else:
            axes.append(np.linspace(lo, hi, opts.grid_points + 2)[1:-1])
    return axes if narrowed else None


class _ScanState:
    """Accumulator for one sweep over profiled ratio candidates."""

    def __init__(self):
        self.lower = np.inf
        self.upper = -np.inf
        self.q_lower = None
        self.q_upper = None
        self.extras_lower = ([], [])
        self.extras_upper = ([], [])
        self.surv_lower = None
        self.surv_upper = None
        self.closure_seen = False
        self.feasible_points = 0
        self.last_certificate = None

    def finite(self) -> bool:
        return bool(np.isfinite(self.lower) and np.isfinite(self.upper))


def _scan_candidates(program: Program, opts: SolverOptions, candidates) -> _ScanState:
    st = _ScanState()
    for values in candidates:
        eqs, _, ineqs, in_labels = _realized_rows(program, values)
        lo = _solve_direction(program, eqs, ineqs, maximize=False, tol=opts.lp_tol)
        if lo[0] == "cc_infeasible":
            feas = _qspace_feasibility(program, eqs, ineqs)
            if feas.status == "infeasible":
                st.last_certificate = feas.certificate
                continue
            st.closure_seen = True      # feasible q exist, all with zero survivor mass
            continue
        hi = _solve_direction(program, eqs, ineqs, maximize=True, tol=opts.lp_tol)
        if hi[0] == "cc_infeasible":
            continue
        st.feasible_points += 1
        for res, is_upper in ((lo, False), (hi, True)):
            if res[0] == "closure":
                st.closure_seen = True
                val = res[1]
                if is_upper and val > st.upper:
                    st.upper, st.q_upper, st.surv_upper = val, None, 0.0
                    st.extras_upper = (ineqs, in_labels)
                if not is_upper and val < st.lower:
                    st.lower, st.q_lower, st.surv_lower = val, None, 0.0
                    st.extras_lower = (ineqs, in_labels)
            else:
                _, val, q, surv = res
                if is_upper and val > st.upper:
                    st.upper, st.q_upper, st.surv_upper = val, q, surv
                    st.extras_upper = (ineqs, in_labels)
                if not is_upper and val < st.lower:
                    st.lower, st.q_lower, st.surv_lower = val, q, surv
                    st.extras_lower = (ineqs, in_labels)
    return st


def max_workers() -> int:
    """Worker-thread cap honored across the package (env LTBOUNDS_MAX_WORKERS)."""
    raw = os.environ.get("LTBOUNDS_MAX_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def solve_bounds(program: Program, opts: Optional[SolverOptions] = None) -> BoundsResult:
    """Minimize and maximize the treated-survivor functional over the program.

    Returns a BoundsResult whose status is "optimal", or
    "denominator_vanishes" when an endpoint is a closure limit (survivor
    mass below 1e-9).  Raises Infeasible with a phase-1 certificate when
    the restrictions contradict the data, and DenominatorVanishes when
    the survivor mass is identically zero on the feasible set.  Before
    declaring a contradiction the solver re-profiles any free ratios
    over their attainable intervals, since a point-identified
    conditional can sit strictly between uniform grid nodes.
    """
    opts = opts or SolverOptions()
    free_idx = [i for i, r in enumerate(program.bilinear) if r.pinned_value is None]
    d = len(free_idx)

    if d > opts.max_profile_dims:
        return _multistart_search(program, opts, free_idx)

    if d == 0:
        candidates: Sequence[dict] = [{}]
    else:
        candidates = [dict(zip(free_idx, combo))
                      for combo in _grid_values(d, opts.grid_points)]

    scan = _scan_candidates(program, opts, candidates)
    if d > 0 and scan.feasible_points == 0 and not scan.closure_seen:
        axes = _refined_axes(program, opts, free_idx)
        if axes is not None:
            retry = [dict(zip(free_idx, combo))
                     for combo in itertools.product(*axes)]
            second = _scan_candidates(program, opts, retry)
            if second.feasible_points or second.closure_seen:
                scan = second
            elif second.last_certificate is not None:
                scan.last_certificate = second.last_certificate

    if not scan.finite():
        if scan.feasible_points == 0 and not scan.closure_seen:
            raise Infeasible("restrictions contradict the observed table",
                             certificate=scan.last_certificate)
        raise DenominatorVanishes("survivor mass is zero everywhere feasible")

    binding = []
    for q, extras in ((scan.q_lower, scan.extras_lower),
                      (scan.q_upper, scan.extras_upper)):
        if q is not None:
            binding += _binding_labels(program, q, extras[0], extras[1])
    binding = tuple(sorted(set(binding)))

    components = {"survivor_lower": scan.surv_lower,
                  "survivor_upper": scan.surv_upper}
    for tag, q in (("lower", scan.q_lower), ("upper", scan.q_upper)):
        if q is not None:
            num = float(program.objective_num @ q)
            den = float(program.objective_den @ q)
            components[f"phi_check_{tag}"] = num / den if den > 0 else float("nan")

    status = "denominator_vanishes" if scan.closure_seen else "optimal"
    profiling_points = 0 if d == 0 else scan.feasible_points
    return BoundsResult(lower=float(scan.lower), upper=float(scan.upper),
                        informative=_informative(float(scan.lower), float(scan.upper)),
                        components=components, status=status,
                        binding_constraints=binding,
                        profiling_points_used=profiling_points)


def _envelope_at(program: Program, opts: SolverOptions, free_idx, point):
    """Inner bound evaluation at one free-ratio vector; None if infeasible."""
    values = dict(zip(free_idx, point))
    eqs, _, ineqs, _ = _realized_rows(program, values)
    lo = _solve_direction(program, eqs, ineqs, maximize=False, tol=opts.lp_tol)
    hi = _solve_direction(program, eqs, ineqs, maximize=True, tol=opts.lp_tol)
    if lo[0] == "cc_infeasible" or hi[0] == "cc_infeasible":
        return None
    return lo[1], hi[1]


def _multistart_search(program: Program, opts: SolverOptions, free_idx) -> BoundsResult:
    """Projected coordinate search over the free ratios (NLP fallback)."""
    rng = np.random.default_rng(opts.seed)
    d = len(free_idx)
    step_floor = 1.0 / (2.0 * (opts.grid_points - 1))
    lower, upper = np.inf, -np.inf
    evals = 0
    any_feasible = False

    starts = rng.uniform(0.0, 1.0, size=(opts.multi_start, d))
    for start in starts:
        point = start.copy()
        result = _envelope_at(program, opts, free_idx, point)
        evals += 1
        if result is None:
            continue
        any_feasible = True
        best_lo, best_hi = result
        step = 0.25
        while step >= step_floor:
            improved = False
            for dim in range(d):
                for delta in (-step, step):
                    cand = point.copy()
                    cand[dim] = min(1.0, max(0.0, cand[dim] + delta))
                    res = _envelope_at(program, opts, free_idx, cand)
                    evals += 1
                    if res is None:
                        continue
                    if res[0] < best_lo - 1e-12 or res[1] > best_hi + 1e-12:
                        best_lo = min(best_lo, res[0])
                        best_hi = max(best_hi, res[1])
                        point = cand
                        improved = True
            if not improved:
                step /= 2.0
        lower = min(lower, best_lo)
        upper = max(upper, best_hi)

    if not any_feasible:
        raise Infeasible("restrictions contradict the observed table "
                         "(no feasible ratio vector found)")
    return BoundsResult(lower=float(lower), upper=float(upper),
                        informative=_informative(float(lower), float(upper)),
                        components={"search": "multi-start"},
                        status="optimal-local", binding_constraints=(),
                        profiling_points_used=evals)
