"""Cross-fitted orthogonal estimation of the selection-adjusted ATETS.

Under the no-selection-on-unobservables identification, the target is
tau = tau_1 - tau_0 with tau_w = E[ nu_w(X) | observational ] and
nu_w(x) = sum_y1 P(Y1=y1 | W=w, x, experimental) E[Y2 | W=w, Y1=y1, x,
observational].  The influence function implemented here augments the
plug-in with two correction blocks, an observational residual block
reweighted by the group-odds and assignment propensities and an
experimental recentering block; its mean-zero and orthogonality
properties are verified numerically in the test suite by exact
population summation, which is what adjudicated the final placement of
the propensity factors.

Nuisances are cell frequencies (X is discrete); clipping into
[0.01, 0.99] guards strict overlap and is reported via warnings.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from scipy.stats import norm

from .data import CellTable, CombinedDataset, EmptyCell

CLIP_LO = 0.01
CLIP_HI = 0.99


@dataclass(frozen=True)
class NuisanceTables:
    """Plug-in nuisance tables on the discrete cell structure.

    mu[w, y1, x]   = E[Y2 | W=w, Y1=y1, X=x, O]
    nu[w, x]       = sum_y1 P(Y1=y1 | W=w, X=x, E) * mu[w, y1, x]
    p_o_y1wx[y1, w, x] = P(G=O | Y1=y1, W=w, X=x)
    p_w1_x_o[x], p_w1_x_e[x] = P(W=1 | X=x, G)
    p_o_x[x]       = P(G=O | X=x)
    p_go           = P(G=O)
    clip_events    = labels of probabilities that hit the overlap clip
    """

    mu: np.ndarray
    nu: np.ndarray
    p_o_y1wx: np.ndarray
    p_w1_x_o: np.ndarray
    p_w1_x_e: np.ndarray
    p_o_x: np.ndarray
    p_go: float
    clip_events: Tuple[str, ...] = ()

    def __post_init__(self):
        k = self.mu.shape[2]
        if self.mu.shape != (2, 2, k) or self.nu.shape != (2, k):
            raise ValueError("nuisance table shapes inconsistent")
        for name in ("mu", "nu", "p_o_y1wx", "p_w1_x_o", "p_w1_x_e", "p_o_x"):
            arr = getattr(self, name)
            if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
                raise ValueError(f"{name} outside [0, 1]")
        if not CLIP_LO - 1e-12 <= self.p_go <= CLIP_HI + 1e-12:
            raise ValueError("group share outside the overlap band")

    @property
    def n_cells(self) -> int:
        return self.mu.shape[2]


@dataclass(frozen=True)
class DmlResult:
    tau_hat: float
    se: float
    ci: Tuple[float, float]
    k: int
    fold_estimates: Tuple[float, ...]
    alpha: float
    seed: int
    n: int

    def __post_init__(self):
        z = norm.ppf(1.0 - self.alpha / 2.0)
        lo = self.tau_hat - z * self.se
        hi = self.tau_hat + z * self.se
        if abs(lo - self.ci[0]) > 1e-9 or abs(hi - self.ci[1]) > 1e-9:
            raise ValueError("confidence interval inconsistent with tau_hat and se")


def _clip_tracked(value: float, label: str, events: list) -> float:
    if value < CLIP_LO:
        events.append(f"{label}={value:.4g}->%.2f" % CLIP_LO)
        return CLIP_LO
    if value > CLIP_HI:
        events.append(f"{label}={value:.4g}->%.2f" % CLIP_HI)
        return CLIP_HI
    return value


def fit_nuisances(fold_data: CombinedDataset) -> NuisanceTables:
    """Cell-frequency nuisance fits on one fold complement.

    Raises EmptyCell naming the first unpopulated (y1, w, x, g) cell;
    with discrete X every such cell is required.
    """
    ds = fold_data
    k = ds.n_cells
    counts = np.zeros((2, 2, 2, k))          # [g(0=E,1=O), y1, w, x]
    y2_sums = np.zeros((2, 2, k))            # [w, y1, x], O rows only
    np.add.at(counts, (ds.is_o.astype(int), ds.y1, ds.w, ds.x), 1.0)
    o_rows = ds.is_o == 1
    np.add.at(y2_sums, (ds.w[o_rows], ds.y1[o_rows], ds.x[o_rows]),
              ds.y2[o_rows].astype(float))

    for g, gname in ((1, "O"), (0, "E")):
        for y1 in (0, 1):
            for w in (0, 1):
                for x in range(k):
                    if counts[g, y1, w, x] == 0:
                        raise EmptyCell(x, gname,
                                        f"no rows with y1={y1}, w={w}")

    events: list = []
    mu = np.zeros((2, 2, k))
    for w in (0, 1):
        for y1 in (0, 1):
            for x in range(k):
                mu[w, y1, x] = y2_sums[w, y1, x] / counts[1, y1, w, x]
    mu = np.clip(mu, 0.0, 1.0)

    nu = np.zeros((2, k))
    for w in (0, 1):
        for x in range(k):
            pe = counts[0, :, w, x] / counts[0, :, w, x].sum()
            nu[w, x] = pe @ mu[w, :, x]

    p_o_y1wx = np.zeros((2, 2, k))
    for y1 in (0, 1):
        for w in (0, 1):
            for x in range(k):
                tot = counts[1, y1, w, x] + counts[0, y1, w, x]
                p_o_y1wx[y1, w, x] = _clip_tracked(
                    counts[1, y1, w, x] / tot, f"P(O|y1={y1},w={w},x={x})", events)

    p_w1_x_o = np.zeros(k)
    p_w1_x_e = np.zeros(k)
    p_o_x = np.zeros(k)
    for x in range(k):
        n_o = counts[1, :, :, x].sum()
        n_e = counts[0, :, :, x].sum()
        p_w1_x_o[x] = _clip_tracked(counts[1, :, 1, x].sum() / n_o,
                                    f"P(W=1|x={x},O)", events)
        p_w1_x_e[x] = _clip_tracked(counts[0, :, 1, x].sum() / n_e,
                                    f"P(W=1|x={x},E)", events)
        p_o_x[x] = _clip_tracked(n_o / (n_o + n_e), f"P(O|x={x})", events)
    p_go = _clip_tracked(ds.n_o / ds.n, "P(O)", events)

    if events:
        warnings.warn("overlap clipping fired: " + "; ".join(events))
    return NuisanceTables(mu=mu, nu=nu, p_o_y1wx=p_o_y1wx,
                          p_w1_x_o=p_w1_x_o, p_w1_x_e=p_w1_x_e,
                          p_o_x=p_o_x, p_go=p_go,
                          clip_events=tuple(events))


def nuisances_from_table(ct: CellTable, p_go: float) -> NuisanceTables:
    """Exact nuisances implied by a population cell table and group share.

    No clipping is applied; intended for population-level checks where
    the true probabilities respect overlap by construction.
    """
    k = ct.n_cells
    mu = np.zeros((2, 2, k))
    nu = np.zeros((2, k))
    p_o_y1wx = np.zeros((2, 2, k))
    joint_o = ct.pmf_o * ct.fx_o[:, None, None, None] * p_go     # [x,y2,y1,w]
    joint_e = ct.pmf_e * ct.fx_e[:, None, None] * (1 - p_go)     # [x,y1,w]
    for w in (0, 1):
        for x in range(k):
            pe_w = ct.pmf_e[x, :, w]
            pe_w = pe_w / pe_w.sum()
            for y1 in (0, 1):
                cell = joint_o[x, :, y1, w]
                mu[w, y1, x] = cell[1] / cell.sum()
                tot_o = cell.sum()
                tot_e = joint_e[x, y1, w]
                p_o_y1wx[y1, w, x] = tot_o / (tot_o + tot_e)
            nu[w, x] = pe_w @ mu[w, :, x]
    p_w1_x_o = ct.pmf_o.sum(axis=(1, 2))[:, 1]
    p_w1_x_e = ct.pmf_e.sum(axis=1)[:, 1]
    mass_o_x = ct.fx_o * p_go
    mass_e_x = ct.fx_e * (1 - p_go)
    p_o_x = mass_o_x / (mass_o_x + mass_e_x)
    return NuisanceTables(mu=mu, nu=nu, p_o_y1wx=p_o_y1wx,
                          p_w1_x_o=p_w1_x_o, p_w1_x_e=p_w1_x_e,
                          p_o_x=p_o_x, p_go=p_go)


def _psi_pieces(y2, y1, w, x, is_o, nt: NuisanceTables):
    """Vectorized influence pieces: psi = psi0 - slope * tau."""
    pgo = nt.p_go
    slope = is_o / pgo
    dnu = nt.nu[1, x] - nt.nu[0, x]
    base = is_o * dnu / pgo

    pi_o = nt.p_o_x[x]
    pi_e = 1.0 - pi_o
    e1e = nt.p_w1_x_e[x]
    e_w_e = np.where(w == 1, e1e, 1.0 - e1e)
    sign = 2.0 * w - 1.0
    shared = sign * pi_o / (pi_e * e_w_e) / pgo

    p_o_cell = nt.p_o_y1wx[y1, w, x]
    odds = (1.0 - p_o_cell) / p_o_cell
    mu_here = nt.mu[w, y1, x]
    y2_safe = np.where(is_o == 1, y2, 0).astype(float)
    resid = is_o * shared * odds * (y2_safe - mu_here)
    recenter = (1 - is_o) * shared * (mu_here - nt.nu[w, x])
    return base + resid + recenter, slope


def eif_value(obs, nuisances: NuisanceTables, tau: float) -> float:
    """Influence value psi(V, tau, eta) for a single observation."""
    arr = lambda v: np.asarray([v])
    is_o = arr(1 if obs.g == "O" else 0)
    y2 = arr(obs.y2 if obs.y2 is not None else -1)
    psi0, slope = _psi_pieces(y2, arr(obs.y1), arr(obs.w), arr(obs.x),
                              is_o, nuisances)
    return float(psi0[0] - slope[0] * tau)


def exact_psi_mean(ct: CellTable, p_go: float, nuisances: NuisanceTables,
                   tau: float) -> float:
    """E[psi] by exact summation over the population atoms."""
    total = 0.0
    k = ct.n_cells
    for x in range(k):
        for w in (0, 1):
            for y1 in (0, 1):
                for y2 in (0, 1):
                    prob = p_go * ct.fx_o[x] * ct.pmf_o[x, y2, y1, w]
                    if prob > 0:
                        psi0, slope = _psi_pieces(
                            np.array([y2]), np.array([y1]), np.array([w]),
                            np.array([x]), np.array([1]), nuisances)
                        total += prob * (psi0[0] - slope[0] * tau)
                prob = (1 - p_go) * ct.fx_e[x] * ct.pmf_e[x, y1, w]
                if prob > 0:
                    psi0, slope = _psi_pieces(
                        np.array([-1]), np.array([y1]), np.array([w]),
                        np.array([x]), np.array([0]), nuisances)
                    total += prob * (psi0[0] - slope[0] * tau)
    return total


def perturbed(nuisances: NuisanceTables, field: str, direction: np.ndarray,
              t: float) -> NuisanceTables:
    """Nuisance tables moved along one coordinate direction (for the
    orthogonality finite-difference checks)."""
    if field == "p_go":
        return replace(nuisances, p_go=nuisances.p_go + t * float(direction))
    arr = getattr(nuisances, field) + t * direction
    return replace(nuisances, **{field: arr})


def single_fold_estimate(ds: CombinedDataset) -> float:
    """In-sample estimate with nuisances fit once on the full data.

    Algebraically identical to the plug-in value when no clipping
    fires, which the test suite checks against the closed form.
    """
    nt = fit_nuisances(ds)
    psi0, slope = _psi_pieces(ds.y2, ds.y1, ds.w, ds.x, ds.is_o, nt)
    return float(psi0.sum() / slope.sum())


def dml_estimate(ds: CombinedDataset, k: int = 5, alpha: float = 0.05,
                 seed: int = 0) -> DmlResult:
    """K-fold cross-fitted estimate with multiplier-free plug-in variance.

    tau solves the aggregated linear moment condition exactly; the
    variance is the cross-fitted mean of psi squared at tau_hat.
    """
    if k < 2:
        raise ValueError("need at least two folds")
    n = ds.n
    if n < 10 * k:
        raise ValueError("need at least 10 observations per fold")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_id = np.empty(n, dtype=int)
    for f in range(k):
        fold_id[perm[f::k]] = f

    psi0 = np.empty(n)
    slope = np.empty(n)
    fold_estimates = []
    for f in range(k):
        test = fold_id == f
        train = ~test
        try:
            nt = fit_nuisances(ds.subset(train))
        except EmptyCell as exc:
            raise EmptyCell(exc.x, exc.g,
                            f"fold {f}: {exc.detail or 'empty cell'}; "
                            "use fewer folds") from exc
        p0, sl = _psi_pieces(ds.y2[test], ds.y1[test], ds.w[test],
                             ds.x[test], ds.is_o[test], nt)
        psi0[test] = p0
        slope[test] = sl
        fold_estimates.append(float(p0.sum() / sl.sum()))

    tau_hat = float(psi0.sum() / slope.sum())
    psi = psi0 - slope * tau_hat
    u_star = float(np.mean(psi ** 2))
    se = math.sqrt(u_star / n)
    z = norm.ppf(1.0 - alpha / 2.0)
    ci = (tau_hat - z * se, tau_hat + z * se)
    return DmlResult(tau_hat=tau_hat, se=se, ci=ci, k=k,
                     fold_estimates=tuple(fold_estimates),
                     alpha=alpha, seed=seed, n=n)
