"""Shared fixtures and table factories for the test suite.

Most tests need population-level CellTables with known structure.  Two
families cover nearly everything:

* random feasible tables drawn by pushing a latent joint through the
  observation map (every restriction-free constraint holds by
  construction), via ``ltbounds.simlab.random_cell_table``;
* "identical-blocks" tables where all six (w, g) blocks share one
  latent vector supported on the monotone patterns, so every
  restriction we expose (MTR, IV, EV, LU, PCO) is feasible at once and
  restriction-chain tests cannot die of infeasibility.

The data-generating configs frozen here were tuned so the relevant
population identity holds exactly (see the per-config comments); tests
assert those identities at tight tolerances.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from ltbounds.data import CellTable
from ltbounds.qspace import u_index
from ltbounds.simlab import (
    DeltaSpec,
    DiscreteLaw,
    OutcomeConfig,
    SelectionConfig,
)


def mtr_chain_table(seed: int, n_cells: int = 1) -> CellTable:
    """Table whose six blocks share one latent law on monotone patterns.

    Because the same 16-vector generates every (w, g) block, the IV and
    EV equalities hold exactly, the LU conditionals agree across arms,
    and the support respects y(1) >= y(0).  Restriction chains built on
    these tables are always feasible.
    """
    rng = np.random.default_rng(seed)
    pmf_o = np.zeros((n_cells, 2, 2, 2))
    pmf_e = np.zeros((n_cells, 2, 2))
    for x in range(n_cells):
        b = np.zeros(16)
        allowed = [
            u_index(i, j, k, l)
            for i, j, k, l in itertools.product((0, 1), repeat=4)
            if not (k == 0 and l == 1) and not (i == 0 and j == 1)
        ]
        b[allowed] = rng.dirichlet(np.full(len(allowed), 0.7))
        fw_o = rng.uniform(0.25, 0.75)
        fw_e = rng.uniform(0.25, 0.75)
        for i, j, k, l in itertools.product((0, 1), repeat=4):
            m = b[u_index(i, j, k, l)]
            pmf_o[x, j, l, 0] += m * (1 - fw_o)
            pmf_o[x, i, k, 1] += m * fw_o
            pmf_e[x, l, 0] += m * (1 - fw_e)
            pmf_e[x, k, 1] += m * fw_e
    fx = rng.dirichlet(np.full(n_cells, 3.0))
    return CellTable.from_masses(pmf_o, pmf_e, fx, fx)


# ---------------------------------------------------------------------------
# population DGPs with known exact structure
# ---------------------------------------------------------------------------

# Selection on the period-1 control outcome only (beta = 0).  All alpha
# atoms lie in (-1, 1] so with eps = +/-1 the period-2 exit chance is
# exactly 1/2 in every stratum both selection arms reach, which makes the
# treated/untreated comparison at fixed y1(w) exact; delta2 = 2.5 pushes
# every treated-world threshold past the eps support so the treated
# conditionals are degenerate (again equal across arms).  Under this
# design the latent-unconfoundedness estimand recovers the truth
# exactly while the growth-comparison one does not.
AC_LU_EXACT = (
    OutcomeConfig(
        alpha_law=DiscreteLaw(values=(-0.6, -0.2, 0.5, 2.0),
                              probs=(0.25, 0.25, 0.3, 0.2)),
        lambda1=0.0,
        lambda2=0.0,
        eps_law=DiscreteLaw(values=(-1.0, 1.0), probs=(0.5, 0.5)),
        delta=DeltaSpec(kind="constant", d1=0.3, d2=2.5),
    ),
    SelectionConfig(mechanism="AC", beta=0.0, c=-1.3),
)

# Roy selection keyed on the individual gain draw only, with equal
# period loadings and gains independent of (alpha, eps): potential
# growth is then identical across selection arms, so the
# growth-comparison estimand is exact while stratifying on the realized
# period-1 outcome is not.
ROY_ECB_EXACT = (
    OutcomeConfig(
        alpha_law=DiscreteLaw(values=(-0.7, 0.1, 0.9), probs=(0.35, 0.4, 0.25)),
        lambda1=0.15,
        lambda2=0.15,
        eps_law=DiscreteLaw(values=(-1.0, 1.0), probs=(0.5, 0.5)),
        delta=DeltaSpec(kind="joint", pairs=((0.4, 0.4), (1.6, 1.6)),
                        probs=(0.55, 0.45)),
    ),
    SelectionConfig(mechanism="Roy", a=1.0, b=1.0, c=2.0),
)

# Selection keyed only on a gain component that never enters outcomes
# (d1 with delta1 identically zero on the outcome side is impossible,
# so instead the Roy rule reads d2 while d1 = 0 for everyone):
# treatment is then independent of all latent outcomes, the
# experimental and observational splits coincide, and every point
# estimand equals the naive contrast.
RANDOMIZED_IDENTICAL = (
    OutcomeConfig(
        alpha_law=DiscreteLaw(values=(-0.6, 0.3, 1.2), probs=(0.4, 0.35, 0.25)),
        lambda1=0.1,
        lambda2=-0.2,
        eps_law=DiscreteLaw(values=(-1.0, 1.0), probs=(0.5, 0.5)),
        delta=DeltaSpec(kind="joint", pairs=((0.0, 0.8), (0.0, 0.2)),
                        probs=(0.4, 0.6)),
    ),
    SelectionConfig(mechanism="Roy", a=0.0, b=1.0, c=0.5),
)


def bracketing_family():
    """Ten DGPs where the ordering theorem's side conditions hold.

    All use low-tail selection on the period-1 control outcome with
    beta = 0 and delta1 = 0, which keeps the experimental short-term
    distribution dominant over the untreated observational one, and the
    binary-outcome growth map automatically non-explosive.
    """
    base_alpha = (-0.6, -0.2, 0.5, 2.0)
    params = [
        (-1.3, 2.5, 0.0, (0.25, 0.25, 0.3, 0.2)),
        (-0.9, 1.0, 0.2, (0.3, 0.3, 0.2, 0.2)),
        (-1.1, 0.6, -0.3, (0.2, 0.3, 0.3, 0.2)),
        (-1.2, 1.8, 0.1, (0.35, 0.2, 0.25, 0.2)),
        (-0.7, 2.0, 0.3, (0.25, 0.3, 0.25, 0.2)),
        (-1.0, 1.4, -0.1, (0.3, 0.25, 0.25, 0.2)),
        (-0.8, 0.9, 0.15, (0.2, 0.35, 0.25, 0.2)),
        (-1.25, 2.2, -0.2, (0.4, 0.2, 0.2, 0.2)),
        (-0.95, 1.6, 0.25, (0.25, 0.25, 0.25, 0.25)),
        (-1.15, 0.8, 0.05, (0.3, 0.2, 0.3, 0.2)),
    ]
    out = []
    for c, d2, lam2, probs in params:
        cfg = OutcomeConfig(
            alpha_law=DiscreteLaw(values=base_alpha, probs=probs),
            lambda1=0.0,
            lambda2=lam2,
            eps_law=DiscreteLaw(values=(-1.0, 1.0), probs=(0.5, 0.5)),
            delta=DeltaSpec(kind="constant", d1=0.0, d2=d2),
        )
        out.append((cfg, SelectionConfig(mechanism="AC", beta=0.0, c=c)))
    return out


def dgp_variants(n_tables: int = 20):
    """Outcome/selection config pairs for population-table generation.

    Used where solver bounds must be compared against the closed-form
    route on tables that came from a coherent latent model (so the
    restriction set is nonempty) rather than from free random masses.
    Parameters vary the alpha support, selection cutoff, and gains
    while keeping every (y1, w) stratum of the observational arm
    populated.
    """
    rng = np.random.default_rng(1234)
    out = []
    while len(out) < n_tables:
        probs = rng.dirichlet((4.0, 4.0, 4.0))
        # with alpha atoms (-1.5, -0.3, 0.8), lambda1 = 0.2 and eps +/-0.5
        # the period-1 control index takes values {-2.1, -1.1, -0.66,
        # 0.34, 0.66, 1.66}; a cutoff below -0.66 and a gain above 1.1
        # populate all four (y1, w) strata of the observational arm
        c = float(rng.uniform(-0.9, -0.7))
        d1 = float(rng.uniform(1.15, 1.45))
        d2 = float(rng.uniform(0.6, 1.2))
        lam2 = float(rng.uniform(-0.2, 0.2))
        cfg = OutcomeConfig(
            alpha_law=DiscreteLaw(values=(-1.5, -0.3, 0.8), probs=tuple(probs)),
            lambda1=0.2,
            lambda2=lam2,
            eps_law=DiscreteLaw(values=(-0.5, 0.5), probs=(0.5, 0.5)),
            delta=DeltaSpec(kind="constant", d1=d1, d2=d2),
        )
        sel = SelectionConfig(mechanism="AC", beta=0.0, c=c)
        out.append((cfg, sel))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)
