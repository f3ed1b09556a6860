"""Closed-form estimands, closed-form bounds, bracketing, sensitivity, GE.

Point estimands: the naive long-term contrast, the latent-unconfoundedness
ATT, the equi-confounding-bias ATT, and the no-state-dependence ATETS.
Bounds: the assumption-free worst case for the treated-survivor effect and
the Frechet-Hoeffding sharpening available under IV+EV+LU.  The bracketing
report checks the ordering conditions under which the two ATT estimands
sandwich the truth, the sensitivity map relaxes the equi-confounding
restriction along a one-parameter deviation, and the equilibrium
adjustment converts a direct effect into a total policy effect.

Everything here is an exact ratio of tabulated cell masses; there is no
smoothing and no regularization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import CellTable, ZeroConditioningMass, MASS_FLOOR

# strict-informativeness guard: a bound interval counts as informative
# only when its width is below 1 by more than this slack
INFORMATIVE_TOL = 1e-12


class DegenerateDenominator(Exception):
    pass


class EqualElasticities(Exception):
    pass


@dataclass(frozen=True)
class EstimandResult:
    value: float
    kind: str
    contributions: Optional[dict] = None

    def __post_init__(self):
        # identification failures can push the assumption-based plug-ins
        # outside [-1, 1], so only finiteness is enforced here
        if not np.isfinite(self.value):
            raise ValueError("estimand must be finite")


@dataclass(frozen=True)
class BoundsResult:
    """An interval for the target effect plus labelled intermediates.

    ``informative`` is computed from the width (strictly below one, with a
    1e-12 guard).  Solver-produced intervals additionally carry a status
    string, the list of binding constraint labels, and the number of
    profiling grid points evaluated.
    """

    lower: float
    upper: float
    informative: bool
    components: dict = field(default_factory=dict)
    status: str = "closed-form"
    binding_constraints: tuple = ()
    profiling_points_used: int = 0

    def __post_init__(self):
        if self.lower > self.upper + 1e-12:
            raise ValueError(f"empty interval: [{self.lower}, {self.upper}]")

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _informative(lower: float, upper: float) -> bool:
    return (upper - lower) < 1.0 - INFORMATIVE_TOL


@dataclass(frozen=True)
class BracketingReport:
    theta_lu: float
    theta_ecb: float
    psi_curve: tuple          # (Psi(0), Psi(1))
    nep_ok: bool
    fosd_margins: tuple       # F_{Y1|W=0,O}(y) - F_{Y1|E}(y) at y in {0,1}
    fosd_ok: bool
    bracket_ok: bool
    reversed_bracketing: bool
    tol: float


@dataclass(frozen=True)
class SensitivityResult:
    rho_bar: float
    delta: float
    adjusted_ecb: float


# ---------------------------------------------------------------------
# accessors


def _w_margins_o(ct: CellTable):
    """(P(W=0|O), P(W=1|O)) from the observational joint."""
    fw = ct.joint_o().sum(axis=(0, 1, 2))
    return float(fw[0]), float(fw[1])


def _mean_y2_given_w(ct: CellTable, w: int) -> float:
    joint = ct.joint_o()
    denom = joint[:, :, :, w].sum()
    if denom <= MASS_FLOOR:
        raise ZeroConditioningMass({"w": w, "g": "O"})
    return float(joint[:, 1, :, w].sum() / denom)


def _mean_y2_given_y1_w_x(ct: CellTable, y1: int, w: int, x: int) -> float:
    cell = ct.pmf_o[x]
    denom = cell[:, y1, w].sum()
    if denom <= MASS_FLOOR:
        raise ZeroConditioningMass({"y1": y1, "w": w, "x": x, "g": "O"})
    return float(cell[1, y1, w] / denom)


def _p_y1_given_w_x_e(ct: CellTable, y1: int, w: int, x: int) -> float:
    cell = ct.pmf_e[x]
    denom = cell[:, w].sum()
    if denom <= MASS_FLOOR:
        raise ZeroConditioningMass({"w": w, "x": x, "g": "E"})
    return float(cell[y1, w] / denom)


def _mean_y1_given_w_x(ct: CellTable, w: int, x: int, g: str) -> float:
    if g == "O":
        cell = ct.pmf_o[x].sum(axis=0)      # [y1, w]
    else:
        cell = ct.pmf_e[x]
    denom = cell[:, w].sum()
    if denom <= MASS_FLOOR:
        raise ZeroConditioningMass({"w": w, "x": x, "g": g})
    return float(cell[1, w] / denom)


# ---------------------------------------------------------------------
# point estimands


def naive_att(ct: CellTable) -> EstimandResult:
    """Observed long-term contrast E[Y2|W=1,O] - E[Y2|W=0,O]."""
    m1 = _mean_y2_given_w(ct, 1)
    m0 = _mean_y2_given_w(ct, 0)
    return EstimandResult(value=m1 - m0, kind="naive",
                          contributions={"treated_mean": m1, "untreated_mean": m0})


def lu_att(ct: CellTable) -> EstimandResult:
    """ATT identified under latent unconfoundedness (with IV and EV).

    The counterfactual treated mean of Y2(0) is rebuilt from the untreated
    observational regression E[Y2|Y1,W=0,X,O], reweighted to the Y1 law of
    the experimental untreated arm, then stripped of the untreated
    contribution:

        theta = E[Y2|W=1,O] + P(W=0|O) E[Y2|W=0,O] / P(W=1|O)
                - E_O[ E_{Y1|W=0,X,E}[ E[Y2|Y1,W=0,X,O] ] ] / P(W=1|O)
    """
    p0, p1 = _w_margins_o(ct)
    if p1 <= MASS_FLOOR:
        raise ZeroConditioningMass({"w": 1, "g": "O"})
    m1 = _mean_y2_given_w(ct, 1)
    m0 = _mean_y2_given_w(ct, 0)

    nested = 0.0
    per_x = []
    for x in range(ct.n_cells):
        inner = 0.0
        for y1 in (0, 1):
            wgt = _p_y1_given_w_x_e(ct, y1, 0, x)
            if wgt <= MASS_FLOOR:
                continue
            inner += wgt * _mean_y2_given_y1_w_x(ct, y1, 0, x)
        nested += ct.fx_o[x] * inner
        per_x.append(inner)

    value = m1 + p0 * m0 / p1 - nested / p1
    return EstimandResult(value=value, kind="lu_att",
                          contributions={"treated_mean": m1, "untreated_mean": m0,
                                         "nested_mean": nested, "p1": p1,
                                         "per_x_nested": per_x})


def ecb_att(ct: CellTable) -> EstimandResult:
    """ATT identified under equi-confounding bias (with IV and EV).

    Three terms, each averaged over the treated observational cells:
    the observed treated mean, the short-term correction
    E[Y1|W=0,x,O]/P(W=1|x,O) minus E[Y1|W=0,x,E]/P(W=1|x,O), and the
    untreated long-term mean E[Y2|W=0,x,O].
    """
    joint = ct.joint_o()
    f_x_w1 = joint[:, :, :, 1].sum(axis=(1, 2))        # f(x, W=1 | O)
    p_w1 = f_x_w1.sum()
    if p_w1 <= MASS_FLOOR:
        raise ZeroConditioningMass({"w": 1, "g": "O"})
    f_x_w1 = f_x_w1 / p_w1                              # f(x | W=1, O)

    m1 = _mean_y2_given_w(ct, 1)
    corr = 0.0
    long0 = 0.0
    per_x = []
    for x in range(ct.n_cells):
        if f_x_w1[x] <= MASS_FLOOR:
            per_x.append(None)
            continue
        p1x = float(ct.pmf_o[x].sum(axis=(0, 1))[1])
        y1_o = _mean_y1_given_w_x(ct, 0, x, "O")
        y1_e = _mean_y1_given_w_x(ct, 0, x, "E")
        y2_o = 0.0
        den0 = ct.pmf_o[x][:, :, 0].sum()
        if den0 <= MASS_FLOOR:
            raise ZeroConditioningMass({"w": 0, "x": x, "g": "O"})
        y2_o = float(ct.pmf_o[x][1, :, 0].sum() / den0)
        corr += f_x_w1[x] * (y1_o - y1_e) / p1x
        long0 += f_x_w1[x] * y2_o
        per_x.append({"p1x": p1x, "y1_gap": y1_o - y1_e, "y2_w0": y2_o})

    value = m1 + corr - long0
    return EstimandResult(value=value, kind="ecb_att",
                          contributions={"treated_mean": m1,
                                         "short_term_correction": corr,
                                         "untreated_long_mean": long0,
                                         "per_x": per_x})


def nsd_atets(ct: CellTable) -> EstimandResult:
    """ATETS under no state dependence: arm-specific nested means.

    tau_w = sum_x f(x|O) sum_y1 P(Y1=y1|W=w,x,E) E[Y2|Y1=y1,W=w,x,O];
    the estimand is tau_1 - tau_0.  The experimental Y1 law is taken from
    the matching treatment arm, which is what makes the expression agree
    with the orthogonal (influence-function) estimator at true nuisances.
    """
    taus = []
    for w in (0, 1):
        total = 0.0
        for x in range(ct.n_cells):
            inner = 0.0
            for y1 in (0, 1):
                wgt = _p_y1_given_w_x_e(ct, y1, w, x)
                if wgt <= MASS_FLOOR:
                    continue
                inner += wgt * _mean_y2_given_y1_w_x(ct, y1, w, x)
            total += ct.fx_o[x] * inner
        taus.append(total)
    return EstimandResult(value=taus[1] - taus[0], kind="nsd_atets",
                          contributions={"tau1": taus[1], "tau0": taus[0]})


# ---------------------------------------------------------------------
# closed-form bounds


def _ratio_root(cells) -> float:
    """Maximize a sum-of-cells linear-fractional objective by bisection.

    ``cells`` holds (weight, candidates) pairs where each candidate is a
    (numerator, denominator) vertex of the cell's attainable set.  The
    optimum value v of sum(w*N)/sum(w*D) solves g(v) = 0 for the
    monotone map g(t) = sum_x w_x max_c (N_c - t*D_c), and the objective
    is a conditional mean so v always lies in [-1, 1].
    """
    lo, hi = -1.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        g = sum(w * max(n - mid * d for n, d in cands) for w, cands in cells)
        if g > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def worstcase_atets_bounds(ct: CellTable) -> BoundsResult:
    """Assumption-free sharp bounds for the treated-survivor effect.

    Within each covariate cell the treated arm pins the joint of
    (Y2(1), Y1(1)) and the untreated arm pins the joint of
    (Y2(0), Y1(0)); everything linking the two worlds is free.  Writing
    p110 = P(Y2=1,Y1=0,W=1), q = P(Y1=0,W=1), p0 = P(W=0) and
    m = P(Y2=1|W=0) per cell, the extremal completions set the untreated
    survivor share lam and couple the free Y1(1) with the observed Y2 at
    a Frechet corner, giving cell numerators

        upper: p110 + p0*min(lam, 1-m)      over lam in {0, 1-m, 1}
        lower: p110 - q - p0*min(lam, m)    over lam in {0, m, 1}

    against the shared denominator q + p0*lam.  The across-cell ratio of
    sums is then maximized over the per-cell vertices.  The interval
    always has width >= 1, so it is never informative on its own.
    """
    joint = ct.joint_o()
    denom = float(joint[:, :, 0, 1].sum() + joint[:, :, :, 0].sum())
    if denom <= MASS_FLOOR:
        raise DegenerateDenominator(
            "P(Y1=0,W=1|O) + P(W=0|O) = 0: no unit can be a treated survivor")

    # per-cell ingredients are taken as absolute masses (cell weight
    # already folded in), so the across-cell weights are all one
    cells_hi, cells_lo = [], []
    for x in range(ct.n_cells):
        p110 = float(joint[x, 1, 0, 1])
        q = float(joint[x, :, 0, 1].sum())
        p0 = float(joint[x, :, :, 0].sum())
        m = float(joint[x, 1, :, 0].sum() / p0) if p0 > MASS_FLOOR else 0.0
        hi_cands, lo_cands = [], []
        for lam in (0.0, m, 1.0 - m, 1.0):
            den = q + p0 * lam
            hi_cands.append((p110 + p0 * min(lam, 1.0 - m), den))
            lo_cands.append((p110 - q - p0 * min(lam, m), den))
        cells_hi.append((1.0, hi_cands))
        cells_lo.append((1.0, lo_cands))

    upper = _ratio_root(cells_hi)
    lower = -_ratio_root([(w, [(-n, d) for n, d in cands])
                          for w, cands in cells_lo])

    # pooled ingredients of the single-term display, kept for inspection
    p110_t = float(joint[:, 1, 0, 1].sum())
    q_t = float(joint[:, :, 0, 1].sum())
    p0_t = float(joint[:, :, :, 0].sum())
    return BoundsResult(lower=lower, upper=upper,
                        informative=_informative(lower, upper),
                        components={"p110": p110_t, "q": q_t, "p0": p0_t,
                                    "term1_lower": p110_t / denom,
                                    "term1_upper": (p110_t + p0_t) / denom,
                                    "term2_lower": 0.0, "term2_upper": 1.0})


def fh_atets_bounds(ct: CellTable) -> BoundsResult:
    """Treated-survivor bounds under IV + EV + LU via Frechet-Hoeffding.

    LU transports the untreated regression across treatment arms given the
    short-term outcome, which point-identifies the treated-survivor mean
    t1 and the marginals a = E[Y2(0)|O] and b = E[Y1(1)|O]; only the
    copula linking Y2(0) and Y1(1) stays free, so the untreated term is
    squeezed into the Frechet-Hoeffding box
    [max{(a-b)/(1-b), 0}, min{a/(1-b), 1}].
    """
    # a: untreated long-term mean rebuilt through the untreated regression
    a = 0.0
    for x in range(ct.n_cells):
        inner = 0.0
        for y1 in (0, 1):
            wgt = _p_y1_given_w_x_e(ct, y1, 0, x)
            if wgt <= MASS_FLOOR:
                continue
            inner += wgt * _mean_y2_given_y1_w_x(ct, y1, 0, x)
        a += ct.fx_o[x] * inner

    # b: short-term treated mean transported from the experimental arm
    b = 0.0
    for x in range(ct.n_cells):
        b += ct.fx_o[x] * _mean_y1_given_w_x(ct, 1, x, "E")

    if 1.0 - b <= MASS_FLOOR:
        raise DegenerateDenominator("E[Y1(1)|O] = 1: no survivors")

    l2 = max((a - b) / (1.0 - b), 0.0)
    u2 = min(a / (1.0 - b), 1.0)

    # t1: treated-survivor mean, weighting the treated regression at Y1=0
    # by the experimental treated-arm survivor share
    num = 0.0
    den = 0.0
    for x in range(ct.n_cells):
        share = _p_y1_given_w_x_e(ct, 0, 1, x)
        if share <= MASS_FLOOR:
            continue
        num += ct.fx_o[x] * share * _mean_y2_given_y1_w_x(ct, 0, 1, x)
        den += ct.fx_o[x] * share
    if den <= MASS_FLOOR:
        raise DegenerateDenominator("survivor share is zero in every cell")
    t1 = num / den

    lower, upper = t1 - u2, t1 - l2
    return BoundsResult(lower=lower, upper=upper,
                        informative=_informative(lower, upper),
                        components={"a": a, "b": b, "t1": t1,
                                    "term2_lower": l2, "term2_upper": u2})


# ---------------------------------------------------------------------
# bracketing, sensitivity, equilibrium


def bracketing_report(ct: CellTable, tol: float = 1e-8) -> BracketingReport:
    """Check the conditions under which theta_LU <= theta_ECB.

    Psi(y) = E[Y2 - Y1 | Y1=y, W=0, O] is the untreated growth at each
    lagged outcome; non-increasing Psi (the non-explosive condition) plus
    dominance of the untreated-observational short-term distribution over
    the experimental one delivers the bracket.
    """
    theta_lu = lu_att(ct).value
    theta_ecb = ecb_att(ct).value

    joint = ct.joint_o()
    psis = []
    for y in (0, 1):
        denom = joint[:, :, y, 0].sum()
        if denom <= MASS_FLOOR:
            raise ZeroConditioningMass({"y1": y, "w": 0, "g": "O"})
        mean_y2 = float(joint[:, 1, y, 0].sum() / denom)
        psis.append(mean_y2 - y)
    nep_ok = psis[1] <= psis[0] + tol

    # F_{Y1|W=0,O}(y) - F_{Y1|E}(y) at y in {0,1}
    denom_o = joint[:, :, :, 0].sum()
    f_o0 = float(joint[:, :, 0, 0].sum() / denom_o)
    je = ct.joint_e()
    f_e0 = float(je[:, 0, :].sum())
    margins = (f_o0 - f_e0, 0.0)
    fosd_ok = all(m <= tol for m in margins)

    bracket_ok = theta_lu <= theta_ecb + tol
    reversed_b = theta_ecb < theta_lu - tol
    return BracketingReport(theta_lu=theta_lu, theta_ecb=theta_ecb,
                            psi_curve=(psis[0], psis[1]), nep_ok=nep_ok,
                            fosd_margins=margins, fosd_ok=fosd_ok,
                            bracket_ok=bracket_ok, reversed_bracketing=reversed_b,
                            tol=tol)


def sensitivity_delta(ct: CellTable, rho_bar: float) -> SensitivityResult:
    """Deviation of the ECB estimand under the scaled-martingale relaxation.

    With the deviation map phi(y; rho) = rho*y applied to the untreated
    short-term outcome,

        Delta(rho) = (rho - 1) (E[Y1|W=0,E] - E[Y1|W=0,O]) / P(W=1|O)

    and the adjusted estimand is theta_ECB - Delta(rho); rho = 1 restores
    the martingale case exactly.
    """
    _, p1 = _w_margins_o(ct)
    if p1 <= MASS_FLOOR:
        raise DegenerateDenominator("P(W=1|O) = 0")

    je = ct.joint_e()
    denom_e = je[:, :, 0].sum()
    if denom_e <= MASS_FLOOR:
        raise ZeroConditioningMass({"w": 0, "g": "E"})
    y1_e = float(je[:, 1, 0].sum() / denom_e)

    joint = ct.joint_o()
    denom_o = joint[:, :, :, 0].sum()
    if denom_o <= MASS_FLOOR:
        raise ZeroConditioningMass({"w": 0, "g": "O"})
    y1_o = float(joint[:, :, 1, 0].sum() / denom_o)

    delta = (rho_bar - 1.0) * (y1_e - y1_o) / p1
    adjusted = ecb_att(ct).value - delta
    return SensitivityResult(rho_bar=rho_bar, delta=delta, adjusted_ecb=adjusted)


def ge_total_effect(tau_ade: float, kappa_d: float, kappa_s: float) -> float:
    """Scale a direct policy effect into the equilibrium total effect.

    tau_TPE = kappa_d / (kappa_d - kappa_s) * tau_ADE, where kappa_d and
    kappa_s are the demand and supply elasticities.
    """
    if kappa_d == kappa_s:
        raise EqualElasticities("kappa_d == kappa_s: total effect undefined")
    return kappa_d / (kappa_d - kappa_s) * tau_ade


# ---------------------------------------------------------------------
# serialization


def _bounds_payload(b: BoundsResult) -> dict:
    return {"lower": b.lower, "upper": b.upper, "informative": b.informative,
            "components": b.components, "status": b.status}


def full_report(ct: CellTable, rho_bars=(0.0, 0.5, 1.0, 1.5, 2.0),
                tau_ade: Optional[float] = None,
                kappa_d: Optional[float] = None,
                kappa_s: Optional[float] = None) -> dict:
    """Assemble the closed-form JSON report payload."""
    report = {
        "estimands": {r.kind: r.value
                      for r in (naive_att(ct), lu_att(ct), ecb_att(ct), nsd_atets(ct))},
        "bounds": {"worstcase": _bounds_payload(worstcase_atets_bounds(ct)),
                   "fh": _bounds_payload(fh_atets_bounds(ct))},
        "bracketing": None,
        "sensitivity_curve": [],
        "ge": None,
    }
    br = bracketing_report(ct)
    report["bracketing"] = {"theta_lu": br.theta_lu, "theta_ecb": br.theta_ecb,
                            "psi_curve": list(br.psi_curve), "nep_ok": br.nep_ok,
                            "fosd_margins": list(br.fosd_margins),
                            "fosd_ok": br.fosd_ok, "bracket_ok": br.bracket_ok,
                            "reversed_bracketing": br.reversed_bracketing}
    for rho in rho_bars:
        s = sensitivity_delta(ct, rho)
        report["sensitivity_curve"].append(
            {"rho_bar": s.rho_bar, "delta": s.delta, "adjusted_ecb": s.adjusted_ecb})
    if kappa_d is not None and kappa_s is not None and tau_ade is not None:
        report["ge"] = {"tau_ade": tau_ade, "kappa_d": kappa_d, "kappa_s": kappa_s,
                        "tau_tpe": ge_total_effect(tau_ade, kappa_d, kappa_s)}
    return report
