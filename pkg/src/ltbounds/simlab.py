"""Simulation laboratory: outcome panels, selection rules, diagnostics.

The outcome model is an interactive-fixed-effect latent equation,
latent Y_t(0) = alpha + lambda_t + alpha*lambda_t + eps_t, with
treatment adding delta_t, and a threshold link producing the binary
outcomes the estimators consume.  Selection is either on untreated
outcomes (discounted-sum threshold) or on gains (threshold in the
treatment effects).  Diagnostics measure, at the latent and at the
binary level, how far the data are from outcome-conditional
unconfoundedness and from common trends; for fully discrete
configurations the same quantities are available as exact population
numbers, along with exact cell tables and ground-truth effects.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .data import CellTable, CombinedDataset, EmptyInput


class EmptyStratum(Exception):
    """No stratum had both selection arms populated."""


@dataclass(frozen=True)
class DiscreteLaw:
    values: Tuple[float, ...]
    probs: Tuple[float, ...]

    def __post_init__(self):
        v = tuple(float(x) for x in self.values)
        p = tuple(float(x) for x in self.probs)
        if len(v) != len(p) or not v:
            raise ValueError("values and probs must align and be non-empty")
        if any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-9:
            raise ValueError("probs must be a distribution")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @property
    def mean(self) -> float:
        return sum(v * p for v, p in zip(self.values, self.probs))

    def sample(self, rng, n):
        return rng.choice(np.asarray(self.values), size=n, p=np.asarray(self.probs))


@dataclass(frozen=True)
class GaussianLaw:
    mean: float
    sd: float

    def __post_init__(self):
        if self.sd < 0:
            raise ValueError("sd must be non-negative")

    def sample(self, rng, n):
        return self.mean + self.sd * rng.standard_normal(n)


@dataclass(frozen=True)
class DeltaSpec:
    """Treatment-effect specification.

    kind "constant": every unit has (d1, d2).  kind "joint": the pair is
    drawn from the given finite joint law, allowing perfectly correlated
    or independent gains across periods.
    """

    kind: str = "constant"
    d1: float = 0.0
    d2: float = 0.0
    pairs: Tuple[Tuple[float, float], ...] = ()
    probs: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("constant", "joint"):
            raise ValueError("kind must be 'constant' or 'joint'")
        if self.kind == "joint":
            if len(self.pairs) != len(self.probs) or not self.pairs:
                raise ValueError("joint spec needs aligned pairs and probs")
            if abs(sum(self.probs) - 1.0) > 1e-9 or any(p < 0 for p in self.probs):
                raise ValueError("probs must be a distribution")

    def atoms(self):
        if self.kind == "constant":
            return [((self.d1, self.d2), 1.0)]
        return list(zip(self.pairs, self.probs))

    def sample(self, rng, n):
        if self.kind == "constant":
            return np.full(n, self.d1), np.full(n, self.d2)
        idx = rng.choice(len(self.pairs), size=n, p=np.asarray(self.probs))
        arr = np.asarray(self.pairs)
        return arr[idx, 0], arr[idx, 1]


@dataclass(frozen=True)
class OutcomeConfig:
    alpha_law: object
    lambda1: float
    lambda2: float
    eps_law: object
    delta: DeltaSpec = DeltaSpec()
    threshold: float = 0.0

    def __post_init__(self):
        if isinstance(self.eps_law, DiscreteLaw) and abs(self.eps_law.mean) > 1e-9:
            raise ValueError("eps law must have mean zero")
        if isinstance(self.eps_law, GaussianLaw) and abs(self.eps_law.mean) > 1e-9:
            raise ValueError("eps law must have mean zero")


@dataclass(frozen=True)
class SelectionConfig:
    mechanism: str                   # "AC" or "Roy"
    beta: float = 0.0                # discount factor for the AC rule
    c: float = 0.0                   # threshold
    a: float = 1.0                   # Roy linear-combination weights
    b: float = 1.0
    table: Optional[Tuple[Tuple[Tuple[float, float], int], ...]] = None

    def __post_init__(self):
        if self.mechanism not in ("AC", "Roy"):
            raise ValueError("mechanism must be 'AC' or 'Roy'")
        if self.mechanism == "AC" and not 0.0 <= self.beta <= 1.0:
            raise ValueError("discount factor beta must lie in [0, 1]")

    def decide(self, l1_0, l2_0, d1, d2):
        if self.mechanism == "AC":
            return (l1_0 + self.beta * l2_0 <= self.c).astype(np.int8)
        if self.table is not None:
            lut = {pair: int(wv) for pair, wv in self.table}
            return np.array([lut[(float(a), float(b))] for a, b in zip(d1, d2)],
                            dtype=np.int8)
        return (self.a * d1 + self.b * d2 > self.c).astype(np.int8)


@dataclass(frozen=True)
class SimPanel:
    """Latent and binary potential outcomes for n units, plus selection."""

    alpha: np.ndarray
    eps1: np.ndarray
    eps2: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    l1_0: np.ndarray
    l1_1: np.ndarray
    l2_0: np.ndarray
    l2_1: np.ndarray
    y1_0: np.ndarray
    y1_1: np.ndarray
    y2_0: np.ndarray
    y2_1: np.ndarray
    w: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.alpha)


def gen_panel(cfg: OutcomeConfig, n: int, seed: int = 0) -> SimPanel:
    """Draw a potential-outcome panel; selection is assigned later."""
    if n < 1:
        raise ValueError("need at least one unit")
    rng = np.random.default_rng(seed)
    alpha = np.asarray(cfg.alpha_law.sample(rng, n), dtype=float)
    eps1 = np.asarray(cfg.eps_law.sample(rng, n), dtype=float)
    eps2 = np.asarray(cfg.eps_law.sample(rng, n), dtype=float)
    d1, d2 = cfg.delta.sample(rng, n)

    l1_0 = alpha + cfg.lambda1 + alpha * cfg.lambda1 + eps1
    l2_0 = alpha + cfg.lambda2 + alpha * cfg.lambda2 + eps2
    l1_1 = l1_0 + d1
    l2_1 = l2_0 + d2
    t = cfg.threshold
    return SimPanel(alpha=alpha, eps1=eps1, eps2=eps2, d1=d1, d2=d2,
                    l1_0=l1_0, l1_1=l1_1, l2_0=l2_0, l2_1=l2_1,
                    y1_0=(l1_0 > t).astype(np.int8), y1_1=(l1_1 > t).astype(np.int8),
                    y2_0=(l2_0 > t).astype(np.int8), y2_1=(l2_1 > t).astype(np.int8))


def select(panel: SimPanel, cfg: SelectionConfig) -> SimPanel:
    w = cfg.decide(panel.l1_0, panel.l2_0, panel.d1, panel.d2)
    return replace(panel, w=w)


def assemble(panel: SimPanel, share_e: float, seed: int = 0) -> CombinedDataset:
    """Split the panel into groups and apply the observation rules.

    Group membership is independent of everything else; experimental
    units get a fair-coin treatment and their long-term outcome masked,
    observational units keep the selection rule's W.
    """
    if not 0.0 < share_e < 1.0:
        raise ValueError("share_e must lie strictly between 0 and 1")
    if panel.w is None:
        raise ValueError("panel has no selection; call select first")
    rng = np.random.default_rng(seed)
    n = panel.n
    in_e = rng.random(n) < share_e
    w_e = (rng.random(n) < 0.5).astype(np.int8)
    w = np.where(in_e, w_e, panel.w).astype(np.int8)
    y1 = np.where(w == 1, panel.y1_1, panel.y1_0).astype(np.int8)
    y2 = np.where(w == 1, panel.y2_1, panel.y2_0).astype(np.int8)
    y2 = np.where(in_e, -1, y2).astype(np.int8)
    return CombinedDataset(y2=y2, y1=y1, w=w,
                           x=np.zeros(n, dtype=np.int32),
                           is_o=~in_e, n_cells=1)


@dataclass(frozen=True)
class AssumptionDiagnostics:
    """Distance-from-identification report.

    ``lu`` is the largest conditional-mean gap between selection arms
    within outcome strata (binary level); ``ecb`` the largest
    trend-difference gap across arms.  Latent-level counterparts use the
    pre-threshold outcomes.  Standard errors are Monte-Carlo (zero for
    population-exact versions); strata skipped for lack of data are
    listed, not fatal.
    """

    lu: float
    lu_se: float
    ecb: float
    ecb_se: float
    lu_latent: float
    ecb_latent: float
    lu_strata: Tuple[Tuple[str, float, float], ...]
    ecb_parts: Tuple[Tuple[str, float, float], ...]
    skipped: Tuple[str, ...]
    n: int


def _arm_gap(vals, strat, w, label_fmt, entries, skipped, weights=None):
    """Max |E[vals|W=1, stratum] - E[vals|W=0, stratum]| over strata."""
    best = 0.0
    best_se = 0.0
    levels = np.unique(strat)
    if len(levels) > 100:
        return np.nan, 0.0
    for lev in levels:
        m1 = (strat == lev) & (w == 1)
        m0 = (strat == lev) & (w == 0)
        label = label_fmt.format(lev)
        if weights is None:
            if not m1.any() or not m0.any():
                skipped.append(label)
                continue
            mu1, mu0 = vals[m1].mean(), vals[m0].mean()
            se = float(np.sqrt(vals[m1].var() / m1.sum() + vals[m0].var() / m0.sum()))
        else:
            wt1, wt0 = weights[m1].sum(), weights[m0].sum()
            if wt1 <= 1e-12 or wt0 <= 1e-12:
                skipped.append(label)
                continue
            mu1 = float(weights[m1] @ vals[m1] / wt1)
            mu0 = float(weights[m0] @ vals[m0] / wt0)
            se = 0.0
        gap = abs(mu1 - mu0)
        entries.append((label, float(gap), se))
        if gap > best:
            best, best_se = float(gap), se
    return best, best_se


def _trend_gap(first, second, w, label, entries, weights=None):
    diff = second - first
    m1, m0 = w == 1, w == 0
    if weights is None:
        gap = diff[m1].mean() - diff[m0].mean()
        se = float(np.sqrt(diff[m1].var() / m1.sum() + diff[m0].var() / m0.sum()))
    else:
        gap = (weights[m1] @ diff[m1] / weights[m1].sum()
               - weights[m0] @ diff[m0] / weights[m0].sum())
        se = 0.0
    entries.append((label, float(abs(gap)), se))
    return abs(float(gap)), se


def _diagnose_arrays(p: SimPanel, weights=None) -> AssumptionDiagnostics:
    if p.w is None:
        raise ValueError("panel has no selection; call select first")
    if weights is None:
        arm1, arm0 = (p.w == 1).any(), (p.w == 0).any()
    else:
        arm1 = weights[p.w == 1].sum() > 1e-12
        arm0 = weights[p.w == 0].sum() > 1e-12
    if not (arm1 and arm0):
        raise EmptyStratum("one selection arm is empty")

    entries, skipped = [], []
    lu, lu_se = 0.0, 0.0
    for wv, out, strat in ((0, p.y2_0, p.y1_0), (1, p.y2_1, p.y1_1)):
        g, se = _arm_gap(out.astype(float), strat, p.w,
                         f"w={wv}:y1={{0}}", entries, skipped, weights)
        if g > lu:
            lu, lu_se = g, se
    if not entries:
        raise EmptyStratum("every outcome stratum lacks a selection arm")

    lat_entries, lat_skipped = [], []
    lu_lat = 0.0
    for wv, out, strat in ((0, p.l2_0, p.l1_0), (1, p.l2_1, p.l1_1)):
        g, _ = _arm_gap(out, np.round(strat, 9), p.w,
                        f"latent w={wv}:l1={{0}}", lat_entries, lat_skipped, weights)
        if not np.isnan(g):
            lu_lat = max(lu_lat, g)
        else:
            lu_lat = np.nan
            break

    # the assumption itself concerns the untreated growth, so the headline
    # number is the control-trend gap; the treated analogue is informative
    # (a Roy rule keyed on the effect shifts it) but not part of ECB
    ecb_entries = []
    ecb, ecb_se = _trend_gap(p.y1_0.astype(float), p.y2_0.astype(float), p.w,
                             "control", ecb_entries, weights)
    _trend_gap(p.y1_1.astype(float), p.y2_1.astype(float), p.w,
               "treated", ecb_entries, weights)

    lat_ecb_entries = []
    gl0, _ = _trend_gap(p.l1_0, p.l2_0, p.w, "latent control", lat_ecb_entries, weights)
    _trend_gap(p.l1_1, p.l2_1, p.w, "latent treated", lat_ecb_entries, weights)

    return AssumptionDiagnostics(
        lu=lu, lu_se=lu_se, ecb=ecb, ecb_se=ecb_se,
        lu_latent=lu_lat, ecb_latent=gl0,
        lu_strata=tuple(entries), ecb_parts=tuple(ecb_entries),
        skipped=tuple(skipped), n=p.n)


def diagnose(panel: SimPanel) -> AssumptionDiagnostics:
    """Sample diagnostics with Monte-Carlo standard errors."""
    return _diagnose_arrays(panel)


# -- population-exact counterparts -----------------------------------


def _require_discrete(cfg: OutcomeConfig):
    for name in ("alpha_law", "eps_law"):
        if not isinstance(getattr(cfg, name), DiscreteLaw):
            raise ValueError(f"{name} must be discrete for population-exact work")


def _atom_panel(cfg: OutcomeConfig, sel: SelectionConfig):
    """All support atoms as a weighted SimPanel (weights returned apart)."""
    _require_discrete(cfg)
    a_atoms = list(zip(cfg.alpha_law.values, cfg.alpha_law.probs))
    e_atoms = list(zip(cfg.eps_law.values, cfg.eps_law.probs))
    d_atoms = cfg.delta.atoms()

    rows = []
    for (av, ap), (e1, p1), (e2, p2), ((dv1, dv2), pd) in itertools.product(
            a_atoms, e_atoms, e_atoms, d_atoms):
        rows.append((ap * p1 * p2 * pd, av, e1, e2, dv1, dv2))
    arr = np.asarray(rows, dtype=float)
    prob, alpha, eps1, eps2, d1, d2 = arr.T
    l1_0 = alpha + cfg.lambda1 + alpha * cfg.lambda1 + eps1
    l2_0 = alpha + cfg.lambda2 + alpha * cfg.lambda2 + eps2
    l1_1 = l1_0 + d1
    l2_1 = l2_0 + d2
    t = cfg.threshold
    panel = SimPanel(alpha=alpha, eps1=eps1, eps2=eps2, d1=d1, d2=d2,
                     l1_0=l1_0, l1_1=l1_1, l2_0=l2_0, l2_1=l2_1,
                     y1_0=(l1_0 > t).astype(np.int8), y1_1=(l1_1 > t).astype(np.int8),
                     y2_0=(l2_0 > t).astype(np.int8), y2_1=(l2_1 > t).astype(np.int8))
    panel = select(panel, sel)
    return panel, prob


def diagnose_population(cfg: OutcomeConfig, sel: SelectionConfig) -> AssumptionDiagnostics:
    """Exact diagnostics from atom enumeration (all SEs are zero)."""
    panel, prob = _atom_panel(cfg, sel)
    return replace(_diagnose_arrays(panel, weights=prob), n=0)


@dataclass(frozen=True)
class PopulationTable:
    """Exact observable tables plus ground truth for one discrete DGP."""

    ct: CellTable
    theta_att: float
    theta_atets: float
    p_w1: float          # treated share under the selection rule


def population_tables(cfg: OutcomeConfig, sel: SelectionConfig) -> PopulationTable:
    """Exact cell table implied by a fully discrete configuration.

    The experimental arm uses a fair coin; the observational arm uses
    the selection rule.  Ground-truth effects are computed from the same
    atoms: the treated-average effect conditions on W=1, the
    short-term-survivor effect on Y1(1)=0.
    """
    panel, prob = _atom_panel(cfg, sel)
    w = panel.w
    pmf_o = np.zeros((1, 2, 2, 2))
    for wv in (0, 1):
        mask = w == wv
        y1 = panel.y1_1 if wv else panel.y1_0
        y2 = panel.y2_1 if wv else panel.y2_0
        np.add.at(pmf_o, (0, y2[mask], y1[mask], wv), prob[mask])
    pmf_e = np.zeros((1, 2, 2))
    for wv in (0, 1):
        y1 = panel.y1_1 if wv else panel.y1_0
        np.add.at(pmf_e, (0, y1, wv), 0.5 * prob)
    ct = CellTable.from_masses(pmf_o=pmf_o, pmf_e=pmf_e,
                               fx_o=np.ones(1), fx_e=np.ones(1))

    p_w1 = float(prob[w == 1].sum())
    effect = (panel.y2_1 - panel.y2_0).astype(float)
    if p_w1 <= 1e-12:
        raise ValueError("selection rule treats nobody")
    theta_att = float(prob[w == 1] @ effect[w == 1] / p_w1)
    surv = panel.y1_1 == 0
    p_surv = float(prob[surv].sum())
    if p_surv <= 1e-12:
        raise ValueError("no short-term survivors under treatment")
    theta_atets = float(prob[surv] @ effect[surv] / p_surv)
    return PopulationTable(ct=ct, theta_att=theta_att,
                           theta_atets=theta_atets, p_w1=p_w1)


# -- sampling and random-table helpers -------------------------------


def sample_from_table(ct: CellTable, share_e: float, n: int,
                      seed: int = 0) -> CombinedDataset:
    """Multinomial sample whose population law matches a cell table."""
    if not 0.0 < share_e < 1.0:
        raise ValueError("share_e must lie strictly between 0 and 1")
    k = ct.n_cells
    atoms = []
    probs = []
    joint_o = ct.joint_o()
    joint_e = ct.joint_e()
    for x in range(k):
        for y2 in (0, 1):
            for y1 in (0, 1):
                for wv in (0, 1):
                    atoms.append((y2, y1, wv, x, True))
                    probs.append((1 - share_e) * joint_o[x, y2, y1, wv])
        for y1 in (0, 1):
            for wv in (0, 1):
                atoms.append((-1, y1, wv, x, False))
                probs.append(share_e * joint_e[x, y1, wv])
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, np.asarray(probs))
    cols = np.repeat(np.asarray(atoms, dtype=int), counts, axis=0)
    if not cols.size:
        raise EmptyInput("empty draw")
    return CombinedDataset(y2=cols[:, 0].astype(np.int8),
                           y1=cols[:, 1].astype(np.int8),
                           w=cols[:, 2].astype(np.int8),
                           x=cols[:, 3].astype(np.int32),
                           is_o=cols[:, 4].astype(bool),
                           n_cells=k)


def random_cell_table(seed: int, n_cells: int = 1) -> CellTable:
    """Dirichlet-random table; every cell mass strictly positive."""
    rng = np.random.default_rng(seed)
    pmf_o = rng.dirichlet(np.ones(8), size=n_cells).reshape(n_cells, 2, 2, 2)
    pmf_e = rng.dirichlet(np.ones(4), size=n_cells).reshape(n_cells, 2, 2)
    fx_o = rng.dirichlet(np.ones(n_cells))
    fx_e = rng.dirichlet(np.ones(n_cells))
    return CellTable.from_masses(pmf_o=pmf_o, pmf_e=pmf_e, fx_o=fx_o, fx_e=fx_e)
