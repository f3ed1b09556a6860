"""Brute-force sampling oracle for the sharp-set solver.

Independently of the LP route, this module draws large batches of
potential-outcome tables that satisfy the requested restrictions by
construction (data-pinned margins, Dirichlet splits for free
directions, iterative proportional fitting when two margins are pinned
at once), re-verifies every constraint numerically, and evaluates the
treated-survivor contrast on the feasible draws.  The min/max seen is
an inner approximation of the identified set, so the oracle interval
must sit inside the solver interval on any table.

Sampling mixes several Dirichlet concentration regimes, including a
near-one-hot regime, so that vertices of the feasible polytope are
reached and the endpoint gap closes as the sample budget grows.
"""

from __future__ import annotations

import numpy as np

from .closed_form import BoundsResult, _informative
from .data import CellTable, RestrictionSet

FEAS_TOL = 1e-6          # constraint slack accepted when verifying a draw
MASS_EPS = 1e-12
SURVIVOR_EPS = 1e-12
CHUNK = 50_000

# pattern coordinates for u = 8*y2(1) + 4*y2(0) + 2*y1(1) + y1(0)
_I = np.array([(u >> 3) & 1 for u in range(16)])
_J = np.array([(u >> 2) & 1 for u in range(16)])
_K = np.array([(u >> 1) & 1 for u in range(16)])
_L = np.array([u & 1 for u in range(16)])

# monotone-response support: y2(1) >= y2(0) and y1(1) >= y1(0)
_MTR_OK = ~(((_K == 0) & (_L == 1)) | ((_I == 0) & (_J == 1)))

_NUM_COEF = np.where(_K == 0, _I - _J, 0).astype(float)
_DEN_COEF = (_K == 0).astype(float)

# concentration regimes; the smallest is effectively one-hot and exists
# to reach polytope vertices
_ALPHAS = np.array([1.0, 0.3, 0.05, 0.005])


class NoFeasiblePoint(Exception):
    """The sampler found no table satisfying the restrictions.

    Unlike the solver's Infeasible (a phase-1 certificate), this is a
    report of failure to find, not a proof of emptiness.
    """


def _dirichlet(rng, alpha, m):
    """Dirichlet draws with per-row concentration; shape (len(alpha), m)."""
    g = rng.gamma(np.repeat(alpha[:, None], m, axis=1))
    s = g.sum(axis=1)
    dead = s <= 0.0
    if dead.any():
        idx = rng.integers(0, m, size=int(dead.sum()))
        g[np.flatnonzero(dead), idx] = 1.0
        s = g.sum(axis=1)
    return g / s[:, None]


def _bernoulli_param(rng, alpha):
    """One free conditional probability per draw, vertex-heavy."""
    return _dirichlet(rng, alpha, 2)[:, 1]


def _ipf(seed, rows, cols, mask, iters=600, tol=1e-12):
    """Batched IPF: fit (n,4,4) matrices to row margins (n,4), col margins (n,4).

    Returns (matrix, converged).  Cells outside ``mask`` stay zero, so
    non-convergence flags margin/support incompatibility for that draw.
    """
    m = seed * mask[None, :, :]
    for it in range(iters):
        rs = m.sum(axis=2)
        scale = np.where(rs > MASS_EPS, rows / np.maximum(rs, MASS_EPS), 0.0)
        m = m * scale[:, :, None]
        cs = m.sum(axis=1)
        scale = np.where(cs > MASS_EPS, cols / np.maximum(cs, MASS_EPS), 0.0)
        m = m * scale[:, None, :]
        if it % 25 == 24:
            dev = np.abs(m.sum(axis=2) - rows).max(axis=1)
            dev = np.maximum(dev, np.abs(m.sum(axis=1) - cols).max(axis=1))
            if dev.max() < tol:
                break
    dev = np.abs(m.sum(axis=2) - rows).max(axis=1)
    dev = np.maximum(dev, np.abs(m.sum(axis=1) - cols).max(axis=1))
    return m, dev < 1e-10


def _u_of_rc():
    """Map (row=(i,k), col=(j,l)) cell of the IPF grid to pattern index."""
    umap = np.zeros((4, 4), dtype=int)
    for r in range(4):
        for c in range(4):
            i, k = r >> 1, r & 1
            j, l = c >> 1, c & 1
            umap[r, c] = 8 * i + 4 * j + 2 * k + l
    return umap


_UMAP = _u_of_rc()
_IPF_MASK_MTR = np.zeros((4, 4), dtype=bool)
for _r in range(4):
    for _c in range(4):
        _IPF_MASK_MTR[_r, _c] = _MTR_OK[_UMAP[_r, _c]]
_IPF_MASK_ALL = np.ones((4, 4), dtype=bool)


def _scatter_ipf(m, n):
    q = np.zeros((n, 16))
    for r in range(4):
        for c in range(4):
            q[:, _UMAP[r, c]] = m[:, r, c]
    return q


def _allowed_ik(j, l, mtr):
    out = []
    for i in (0, 1):
        for k in (0, 1):
            if mtr and ((i == 0 and j == 1) or (k == 0 and l == 1)):
                continue
            out.append((i, k))
    return out


def _allowed_jl(i, k, mtr):
    out = []
    for j in (0, 1):
        for l in (0, 1):
            if mtr and ((i == 0 and j == 1) or (k == 0 and l == 1)):
                continue
            out.append((j, l))
    return out


def _split_block(rng, alpha, n, pinned, pinned_axis, mtr):
    """Free-split construction: pinned 2x2 margin, Dirichlet over the rest.

    pinned_axis "jl": pinned is the (j,l) joint (untreated O block);
    "ik": the (i,k) joint (treated O block).
    """
    q = np.zeros((n, 16))
    for a in (0, 1):
        for b in (0, 1):
            mass = pinned[a, b]
            if mass <= MASS_EPS:
                continue
            if pinned_axis == "jl":
                combos = _allowed_ik(a, b, mtr)
                us = [8 * i + 4 * a + 2 * k + b for (i, k) in combos]
            else:
                combos = _allowed_jl(a, b, mtr)
                us = [8 * a + 4 * j + 2 * b + l for (j, l) in combos]
            split = _dirichlet(rng, alpha, len(us))
            for col, u in enumerate(us):
                q[:, u] += mass * split[:, col]
    return q


def _split_e_arm(rng, alpha, n, marg, obs_coord, mtr):
    """E-group arm with one observed binary margin (l for w=0, k for w=1)."""
    q = np.zeros((n, 16))
    for v in (0, 1):
        mass = marg[v]
        if mass <= MASS_EPS:
            continue
        us = []
        for u in range(16):
            coord = _L[u] if obs_coord == "l" else _K[u]
            if coord != v:
                continue
            if mtr and not _MTR_OK[u]:
                continue
            us.append(u)
        split = _dirichlet(rng, alpha, len(us))
        for col, u in enumerate(us):
            q[:, u] += mass * split[:, col]
    return q


def _merged_e(rng, alpha, n, l_marg, k_marg, mtr):
    """Merged E block: both one-dimensional margins pinned by the data."""
    k1, l1 = float(k_marg[1]), float(l_marg[1])
    if mtr:
        if l1 > k1 + 1e-9:
            return np.zeros((n, 16)), np.zeros(n, dtype=bool)
        m11 = np.full(n, l1)
    else:
        lo = max(0.0, k1 + l1 - 1.0)
        hi = min(k1, l1)
        frac = _bernoulli_param(rng, alpha)
        m11 = lo + frac * (hi - lo)
    kl = np.zeros((n, 2, 2))     # joint over (k, l)
    kl[:, 1, 1] = m11
    kl[:, 1, 0] = k1 - m11
    kl[:, 0, 1] = l1 - m11
    kl[:, 0, 0] = 1.0 - k1 - l1 + m11
    kl = np.clip(kl, 0.0, None)

    q = np.zeros((n, 16))
    for k in (0, 1):
        for l in (0, 1):
            if mtr and k == 0 and l == 1:
                continue
            if mtr:
                pairs = [(0, 0), (1, 0), (1, 1)]
            else:
                pairs = [(0, 0), (0, 1), (1, 0), (1, 1)]
            split = _dirichlet(rng, alpha, len(pairs))
            for col, (i, j) in enumerate(pairs):
                u = 8 * i + 4 * j + 2 * k + l
                q[:, u] += kl[:, k, l] * split[:, col]
    return q, np.ones(n, dtype=bool)


def _cond(vec2):
    """P(second coordinate = 1) from a length-2 nonneg vector, or None."""
    s = float(vec2.sum())
    if s <= 1e-10:
        return None
    return float(vec2[1]) / s


def _safe_cond_joint(mass):
    s = mass.sum()
    if s <= MASS_EPS:
        return np.full((2, 2), 0.25)
    return mass / s


def _safe_marg(mass):
    s = mass.sum()
    if s <= MASS_EPS:
        return np.full(2, 0.5)
    return mass / s


def _mixture_pin(pe, known, f_known, f_free):
    """Solve f_known*known + f_free*free = pe for the free margin."""
    if f_free <= MASS_EPS:
        return np.full(2, 0.5)
    free = (pe - f_known * known) / f_free
    free = np.clip(free, 0.0, 1.0)
    s = free.sum()
    return free / s if s > MASS_EPS else np.full(2, 0.5)


def _ik_joint(n, kap, sig0, sig1):
    """(i,k) joint as rows 2i+k from a k margin and P(i=1|k) per level."""
    h = np.zeros((n, 4))
    h[:, 0] = kap[:, 0] * (1 - sig0)
    h[:, 2] = kap[:, 0] * sig0
    h[:, 1] = kap[:, 1] * (1 - sig1)
    h[:, 3] = kap[:, 1] * sig1
    return h


def _jl_joint(n, lam, rho0, rho1):
    """(j,l) joint as cols 2j+l from an l margin and P(j=1|l) per level."""
    g = np.zeros((n, 4))
    g[:, 0] = lam[:, 0] * (1 - rho0)
    g[:, 2] = lam[:, 0] * rho0
    g[:, 1] = lam[:, 1] * (1 - rho1)
    g[:, 3] = lam[:, 1] * rho1
    return g


def _free_or(rng, alpha, n, value):
    if value is None:
        return _bernoulli_param(rng, alpha)
    return np.full(n, value)


def _marg_or_free(rng, alpha, n, pinned):
    if pinned is not None:
        return np.repeat(pinned[None, :], n, axis=0)
    p = _bernoulli_param(rng, alpha)
    return np.stack([1 - p, p], axis=1)


def _seed_matrix(rng, alpha, n, mask):
    g = rng.gamma(np.repeat(alpha[:, None], 16, axis=1)).reshape(n, 4, 4)
    g = np.maximum(g, 1e-12)
    return g * mask[None, :, :]


def _cols_from_22(n, joint):
    cols = np.zeros((n, 4))
    for a in (0, 1):
        for b in (0, 1):
            cols[:, 2 * a + b] = joint[a, b]
    return cols


def _build_lu_blocks(rng, alpha, n, g0, h1, lam1, kap0, mask44):
    """Both O blocks under the latent-unconfoundedness coupling.

    The untreated block pins its (j,l) joint from data and inherits the
    treated block's P(y2(1)=1 | y1(1)) conditionals; symmetrically the
    treated block inherits P(y2(0)=1 | y1(0)) from the untreated data.
    Conditionals undefined in the data (empty strata) are sampled free.
    """
    rho0 = _free_or(rng, alpha, n, _cond(g0[:, 0]))
    rho1 = _free_or(rng, alpha, n, _cond(g0[:, 1]))
    sig0 = _free_or(rng, alpha, n, _cond(h1[:, 0]))
    sig1 = _free_or(rng, alpha, n, _cond(h1[:, 1]))
    lam1_arr = _marg_or_free(rng, alpha, n, lam1)
    kap0_arr = _marg_or_free(rng, alpha, n, kap0)

    h0_rows = _ik_joint(n, kap0_arr, sig0, sig1)
    m0, conv0 = _ipf(_seed_matrix(rng, alpha, n, mask44),
                     h0_rows, _cols_from_22(n, g0), mask44)
    q0 = _scatter_ipf(m0, n)

    h1_rows = np.zeros((n, 4))
    for i in (0, 1):
        for k in (0, 1):
            h1_rows[:, 2 * i + k] = h1[i, k]
    g1_cols = _jl_joint(n, lam1_arr, rho0, rho1)
    m1, conv1 = _ipf(_seed_matrix(rng, alpha, n, mask44),
                     h1_rows, g1_cols, mask44)
    q1 = _scatter_ipf(m1, n)
    return q0, q1, conv0 & conv1


def _build_ev_blocks(rng, alpha, n, g0, h1, lam1, kap0, mask44):
    """O blocks when only the shared-superpopulation margins are pinned.

    Each block keeps its observed 2x2 joint and must additionally match
    the EV-implied one-dimensional margin on the opposite period; the
    conditionals on that side are free and sampled, with IPF providing
    the coupling.
    """
    kap0_arr = _marg_or_free(rng, alpha, n, kap0)
    lam1_arr = _marg_or_free(rng, alpha, n, lam1)

    h0_rows = _ik_joint(n, kap0_arr,
                        _bernoulli_param(rng, alpha), _bernoulli_param(rng, alpha))
    m0, conv0 = _ipf(_seed_matrix(rng, alpha, n, mask44),
                     h0_rows, _cols_from_22(n, g0), mask44)
    q0 = _scatter_ipf(m0, n)

    h1_rows = np.zeros((n, 4))
    for i in (0, 1):
        for k in (0, 1):
            h1_rows[:, 2 * i + k] = h1[i, k]
    g1_cols = _jl_joint(n, lam1_arr,
                        _bernoulli_param(rng, alpha), _bernoulli_param(rng, alpha))
    m1, conv1 = _ipf(_seed_matrix(rng, alpha, n, mask44), h1_rows, g1_cols, mask44)
    q1 = _scatter_ipf(m1, n)
    return q0, q1, conv0 & conv1


def _verify_cell(ct, restrictions, x, q0, q1, qe0, qe1,
                 g0, h1, pe0, pe1, f0, f1, fe0, fe1, merged):
    """Re-check every per-cell constraint on the draws, within 1e-6."""
    n = q0.shape[0]
    ok = np.ones(n, dtype=bool)
    for q in (q0, q1, qe0, qe1):
        ok &= np.abs(q.sum(axis=1) - 1.0) <= FEAS_TOL
        ok &= q.min(axis=1) >= -1e-9

    # containment: observed joints/margins must be reproduced
    if ct.pmf_o[x, :, :, 0].sum() > MASS_EPS:
        for j in (0, 1):
            for l in (0, 1):
                marg = q0[:, (_J == j) & (_L == l)].sum(axis=1)
                ok &= np.abs(marg - g0[j, l]) <= FEAS_TOL
    if ct.pmf_o[x, :, :, 1].sum() > MASS_EPS:
        for i in (0, 1):
            for k in (0, 1):
                marg = q1[:, (_I == i) & (_K == k)].sum(axis=1)
                ok &= np.abs(marg - h1[i, k]) <= FEAS_TOL
    if ct.pmf_e[x, :, 0].sum() > MASS_EPS:
        for l in (0, 1):
            ok &= np.abs(qe0[:, _L == l].sum(axis=1) - pe0[l]) <= FEAS_TOL
    if ct.pmf_e[x, :, 1].sum() > MASS_EPS:
        for k in (0, 1):
            ok &= np.abs(qe1[:, _K == k].sum(axis=1) - pe1[k]) <= FEAS_TOL

    if restrictions.mtr:
        for q in (q0, q1, qe0, qe1):
            ok &= q[:, ~_MTR_OK].max(axis=1) <= FEAS_TOL

    if restrictions.iv and not merged:
        ok &= np.abs(qe0 - qe1).max(axis=1) <= FEAS_TOL

    if restrictions.ev:
        mix_o = f0 * q0 + f1 * q1
        mix_e = fe0 * qe0 + fe1 * qe1
        ok &= np.abs(mix_o - mix_e).max(axis=1) <= FEAS_TOL

    if restrictions.lu:
        for coord, val_coord in ((_L, _J), (_K, _I)):
            for lev in (0, 1):
                m0 = q0[:, coord == lev].sum(axis=1)
                m1 = q1[:, coord == lev].sum(axis=1)
                c0 = q0[:, (coord == lev) & (val_coord == 1)].sum(axis=1)
                c1 = q1[:, (coord == lev) & (val_coord == 1)].sum(axis=1)
                defined = (m0 > 1e-4) & (m1 > 1e-4)
                gap = np.abs(c0 / np.maximum(m0, MASS_EPS)
                             - c1 / np.maximum(m1, MASS_EPS))
                ok &= ~defined | (gap <= 1e-5)

    if restrictions.st:
        st_blocks = [q0, q1, qe0] if merged else [q0, q1, qe0, qe1]
        for q in st_blocks:
            for a in (0, 1):
                for b in (0, 1):
                    p2 = q[:, (_I == a) & (_J == b)].sum(axis=1)
                    p1 = q[:, (_K == a) & (_L == b)].sum(axis=1)
                    ok &= np.abs(p2 - p1) <= FEAS_TOL
    return ok


def _verify_group_level(restrictions, blocks, f_w_o, f_w_e):
    """Mixture-level checks: dominance and survivor-odds monotonicity."""
    any_block = next(iter(blocks.values()))
    n = any_block[0].shape[0]
    ok = np.ones(n, dtype=bool)
    for x, (q0, q1, qe0, qe1) in blocks.items():
        mixes = [f_w_o[x, 0] * q0 + f_w_o[x, 1] * q1,
                 f_w_e[x, 0] * qe0 + f_w_e[x, 1] * qe1]
        for mix in mixes:
            if restrictions.sd:
                ok &= (mix[:, _I == 0].sum(axis=1)
                       - mix[:, _J == 0].sum(axis=1)) <= FEAS_TOL
                ok &= (mix[:, _K == 0].sum(axis=1)
                       - mix[:, _L == 0].sum(axis=1)) <= FEAS_TOL
            if restrictions.pco:
                b = mix[:, (_K == 0) & (_L == 0)].sum(axis=1)
                a = mix[:, (_J == 1) & (_K == 0) & (_L == 0)].sum(axis=1)
                d = mix[:, (_K == 1) & (_L == 0)].sum(axis=1)
                c = mix[:, (_J == 1) & (_K == 1) & (_L == 0)].sum(axis=1)
                defined = (b > 1e-8) & (d > 1e-8)
                gap = c / np.maximum(d, MASS_EPS) - a / np.maximum(b, MASS_EPS)
                ok &= ~defined | (gap >= -FEAS_TOL)
    return ok


def brute_force_bounds(ct: CellTable, restrictions: RestrictionSet,
                       grid_points: int = 100_000, seed: int = 0) -> BoundsResult:
    """Sample restriction-feasible potential-outcome tables and bound Phi.

    ``grid_points`` is the total sampling budget.  Every draw is built to
    satisfy the data-pinned margins exactly and the cross-block
    restrictions by construction where possible, then all constraints
    are re-verified within 1e-6; draws failing any check are discarded.
    Raises NoFeasiblePoint when no surviving draw exists, with a message
    distinguishing "nothing feasible" from "survivor mass always zero".
    """
    if ct.n_cells > 2:
        raise ValueError("oracle handles at most two covariate cells")
    if restrictions.nsd:
        raise ValueError("nsd is a point-identifying assumption, not a set restriction")

    rng = np.random.default_rng(seed)
    mtr = restrictions.mtr
    merged = restrictions.iv or not (restrictions.ev or restrictions.sd or
                                     restrictions.st or restrictions.pco or mtr)
    mask44 = _IPF_MASK_MTR if mtr else _IPF_MASK_ALL

    f_w_o = ct.pmf_o.sum(axis=(1, 2))          # [x, w]
    f_w_e = ct.pmf_e.sum(axis=1)               # [x, w]
    f_wx_o = f_w_o * ct.fx_o[:, None]

    lo_seen, hi_seen = np.inf, -np.inf
    n_feasible = 0
    n_survivor = 0
    remaining = int(grid_points)

    while remaining > 0:
        n = min(CHUNK, remaining)
        remaining -= n
        alpha = rng.choice(_ALPHAS, size=n)
        ok = np.ones(n, dtype=bool)
        num = np.zeros(n)
        den = np.zeros(n)
        blocks = {}

        for x in range(ct.n_cells):
            g0 = _safe_cond_joint(ct.pmf_o[x, :, :, 0])   # (j,l) joint at w=0
            h1 = _safe_cond_joint(ct.pmf_o[x, :, :, 1])   # (i,k) joint at w=1
            pe0 = _safe_marg(ct.pmf_e[x, :, 0])
            pe1 = _safe_marg(ct.pmf_e[x, :, 1])
            f0, f1 = float(f_w_o[x, 0]), float(f_w_o[x, 1])

            lam0 = g0.sum(axis=0)
            kap1 = h1.sum(axis=0)
            if restrictions.ev:
                lam1 = _mixture_pin(pe0, lam0, f0, f1)
                kap0 = _mixture_pin(pe1, kap1, f1, f0)
            else:
                lam1 = kap0 = None

            if restrictions.lu:
                q0, q1, conv = _build_lu_blocks(rng, alpha, n, g0, h1,
                                                lam1, kap0, mask44)
                ok &= conv
            elif restrictions.ev:
                q0, q1, conv = _build_ev_blocks(rng, alpha, n, g0, h1,
                                                lam1, kap0, mask44)
                ok &= conv
            else:
                q0 = _split_block(rng, alpha, n, g0, "jl", mtr)
                q1 = _split_block(rng, alpha, n, h1, "ik", mtr)

            if restrictions.ev:
                mix = f0 * q0 + f1 * q1
                qe0 = qe1 = mix
            elif merged:
                qe, conv = _merged_e(rng, alpha, n, pe0, pe1, mtr)
                ok &= conv
                qe0 = qe1 = qe
            else:
                qe0 = _split_e_arm(rng, alpha, n, pe0, "l", mtr)
                qe1 = _split_e_arm(rng, alpha, n, pe1, "k", mtr)

            blocks[x] = (q0, q1, qe0, qe1)
            num += f_wx_o[x, 0] * (q0 @ _NUM_COEF) + f_wx_o[x, 1] * (q1 @ _NUM_COEF)
            den += f_wx_o[x, 0] * (q0 @ _DEN_COEF) + f_wx_o[x, 1] * (q1 @ _DEN_COEF)

            ok &= _verify_cell(ct, restrictions, x, q0, q1, qe0, qe1,
                               g0, h1, pe0, pe1, f0, f1,
                               float(f_w_e[x, 0]), float(f_w_e[x, 1]), merged)

        if restrictions.pco or restrictions.sd:
            ok &= _verify_group_level(restrictions, blocks, f_w_o, f_w_e)

        n_feasible += int(ok.sum())
        phi_mask = ok & (den > SURVIVOR_EPS)
        n_survivor += int(phi_mask.sum())
        if phi_mask.any():
            phi = num[phi_mask] / den[phi_mask]
            lo_seen = min(lo_seen, float(phi.min()))
            hi_seen = max(hi_seen, float(phi.max()))

    if n_feasible == 0:
        raise NoFeasiblePoint("no sampled table satisfied the restrictions")
    if n_survivor == 0:
        raise NoFeasiblePoint("feasible tables exist but all have zero survivor mass")

    return BoundsResult(lower=lo_seen, upper=hi_seen,
                        informative=_informative(lo_seen, hi_seen),
                        components={"feasible_samples": float(n_feasible),
                                    "survivor_samples": float(n_survivor),
                                    "requested_samples": float(grid_points)},
                        status="oracle", binding_constraints=(),
                        profiling_points_used=n_feasible)
