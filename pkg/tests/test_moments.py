"""Max-statistic moment testing and the moment generators.

Hand-checkable statistics first, then the linearization exactness
property (column means equal the plug-in functionals), then the error
taxonomy of the generators.
"""

import io

import numpy as np
import pytest

from ltbounds.data import EmptyCell, ingest
from ltbounds.moments import (
    MissingInstrument,
    MomentMatrix,
    ZeroVariance,
    external_validity_moments,
    fosd_moments,
    max_t_statistic,
    multiplier_bootstrap_cv,
    run_test,
)


def test_max_t_hand_example():
    # column A: values (1, 3): mean 2, population sd 1, t = 2*sqrt(2)
    # column B: values (0, 2): mean 1, sd 1, t = sqrt(2); max is A
    m = MomentMatrix(values=np.array([[1.0, 0.0], [3.0, 2.0]]), labels=("a", "b"))
    assert max_t_statistic(m) == pytest.approx(2.0 * np.sqrt(2.0), abs=1e-12)


def test_zero_variance_identified_by_label():
    m = MomentMatrix(values=np.array([[1.0, 5.0], [2.0, 5.0]]), labels=("ok", "flat"))
    with pytest.raises(ZeroVariance) as exc:
        max_t_statistic(m)
    assert exc.value.label == "flat"


def test_moment_matrix_validation():
    with pytest.raises(ValueError):
        MomentMatrix(values=np.array([1.0, 2.0]), labels=("a",))
    with pytest.raises(ValueError):
        MomentMatrix(values=np.array([[np.inf]]), labels=("a",))
    with pytest.raises(ValueError):
        MomentMatrix(values=np.array([[1.0, 2.0]]), labels=("a",))


def test_run_test_deterministic():
    rng = np.random.default_rng(0)
    m = MomentMatrix(values=rng.normal(size=(200, 5)), labels=tuple("abcde"))
    r1 = run_test(m, alpha=0.05, b=500, seed=3)
    r2 = run_test(m, alpha=0.05, b=500, seed=3)
    assert r1 == r2
    assert r1.reject == (r1.statistic > r1.critical_value)


def test_critical_value_monotone_in_alpha():
    rng = np.random.default_rng(1)
    m = MomentMatrix(values=rng.normal(size=(300, 8)), labels=tuple("abcdefgh"))
    cv_strict = multiplier_bootstrap_cv(m, alpha=0.01, b=2000, seed=0)
    cv_loose = multiplier_bootstrap_cv(m, alpha=0.10, b=2000, seed=0)
    assert cv_strict >= cv_loose


def test_single_column_cv_near_gaussian_quantile():
    # with one column the max statistic is a studentized mean, so the
    # bootstrap critical value should approach the normal 95% point
    rng = np.random.default_rng(2)
    m = MomentMatrix(values=rng.normal(size=(10_000, 1)), labels=("z",))
    cv = multiplier_bootstrap_cv(m, alpha=0.05, b=10_000, seed=0)
    assert abs(cv - 1.6449) < 0.05


def test_bootstrap_guards():
    m = MomentMatrix(values=np.random.default_rng(0).normal(size=(50, 2)),
                     labels=("a", "b"))
    with pytest.raises(ValueError):
        multiplier_bootstrap_cv(m, alpha=0.0, b=500, seed=0)
    with pytest.raises(ValueError):
        multiplier_bootstrap_cv(m, alpha=0.05, b=50, seed=0)
    with pytest.raises(ValueError):
        run_test(m, alpha=1.5)


def _two_group_csv(n_o0_y0, n_o0_y1, n_e_y0, n_e_y1):
    """Rows with untreated observational and untreated experimental units."""
    lines = ["y2,y1,w,x,g"]
    lines += ["0,0,0,0,O"] * n_o0_y0
    lines += ["0,1,0,0,O"] * n_o0_y1
    lines += [",0,0,0,E"] * n_e_y0
    lines += [",1,0,0,E"] * n_e_y1
    # one treated row per group so the dataset is well-formed
    lines += ["1,0,1,0,O", ",0,1,0,E"]
    return "\n".join(lines) + "\n"


def test_fosd_column_mean_matches_plugin():
    ds = ingest(io.StringIO(_two_group_csv(30, 10, 25, 15)), n_cells=1)
    m = fosd_moments(ds)
    assert m.p == 1
    assert m.labels == ("fosd:y0",)
    # plug-in: F(0|W=0,O) over the 40 untreated O rows minus F(0|E)
    # over all 41 experimental rows (treated E row has y1=0)
    f_o0 = 30 / 40
    f_e = 26 / 41
    assert m.column_means()[0] == pytest.approx(f_o0 - f_e, abs=1e-12)


def test_fosd_detects_violation():
    # observational untreated mass piles on y1=0 while the experimental
    # arm sits on y1=1: dominance clearly fails
    ds = ingest(io.StringIO(_two_group_csv(190, 10, 10, 190)), n_cells=1)
    res = run_test(fosd_moments(ds), alpha=0.05, b=1000, seed=0)
    assert res.reject
    assert res.p_value < 0.01


def test_fosd_holds_under_equality():
    ds = ingest(io.StringIO(_two_group_csv(100, 100, 100, 100)), n_cells=1)
    res = run_test(fosd_moments(ds), alpha=0.05, b=1000, seed=0)
    assert not res.reject


def _ev_csv(extra=""):
    lines = ["y2,y1,w,x,g" + extra]
    rng = np.random.default_rng(5)
    for _ in range(60):
        y2, y1, w = rng.integers(0, 2, size=3)
        suffix = f",{rng.integers(0, 2)}" if extra else ""
        lines.append(f"{y2},{y1},{w},0,O{suffix}")
    for _ in range(60):
        y1, w = rng.integers(0, 2, size=2)
        suffix = f",{rng.integers(0, 2)}" if extra else ""
        lines.append(f",{y1},{w},0,E{suffix}")
    return "\n".join(lines) + "\n"


def test_external_validity_base_columns():
    ds = ingest(io.StringIO(_ev_csv()), n_cells=1)
    m = external_validity_moments(ds, assumption="none")
    assert m.p == 2
    assert m.labels == ("base_lower:x0", "base_upper:x0")


def test_external_validity_assumption_columns():
    ds = ingest(io.StringIO(_ev_csv()), n_cells=1)
    assert external_validity_moments(ds, assumption="sd").p == 3
    assert external_validity_moments(ds, assumption="sdl").p == 3
    het = external_validity_moments(ds, assumption="het")
    assert het.p == 4
    # the threshold pair is an equality split into two inequalities
    np.testing.assert_allclose(het.values[:, 2], -het.values[:, 3], atol=1e-12)


def test_external_validity_unknown_assumption():
    ds = ingest(io.StringIO(_ev_csv()), n_cells=1)
    with pytest.raises(ValueError):
        external_validity_moments(ds, assumption="wishful")


def test_instrumented_assumptions_need_column():
    ds = ingest(io.StringIO(_ev_csv()), n_cells=1)
    with pytest.raises(MissingInstrument):
        external_validity_moments(ds, assumption="ex")
    with pytest.raises(MissingInstrument):
        external_validity_moments(ds, assumption="ex", v_column=[0, 1])


def test_instrumented_columns_per_value():
    ds, extras = ingest(io.StringIO(_ev_csv(",v")), n_cells=1,
                        extra_columns=("v",))
    m = external_validity_moments(ds, assumption="ex", v_column=extras["v"])
    # base pair plus one column per (event in {0,1}, instrument value)
    assert m.p == 2 + 2 * 2
    assert any(lbl.startswith("ex:x0:K0:v0") for lbl in m.labels)
    miv = external_validity_moments(ds, assumption="miv", v_column=extras["v"])
    # monotone version pairs each evaluation value with the admissible
    # comparison values: v0 has {0}, v1 has {0,1} for K0 and the mirror
    # for K1, so 3 + 3 columns on top of the base pair
    assert miv.p == 2 + 3 + 3


def test_empty_cell_reported_for_missing_treated_e():
    text = "y2,y1,w,x,g\n" + "1,0,1,0,O\n0,1,0,0,O\n" + ",1,0,0,E\n" * 3
    ds = ingest(io.StringIO(text), n_cells=1)
    with pytest.raises(EmptyCell) as exc:
        external_validity_moments(ds, assumption="none")
    assert exc.value.g == "E"


def test_pvalue_and_cv_consistent():
    rng = np.random.default_rng(9)
    m = MomentMatrix(values=rng.normal(0.05, 1.0, size=(400, 3)), labels=("a", "b", "c"))
    res = run_test(m, alpha=0.05, b=2000, seed=1)
    # rejection at level alpha must agree with p-value below alpha up to
    # the discreteness of the bootstrap distribution
    if res.p_value < res.alpha - 1.0 / res.b:
        assert res.reject
    if res.p_value > res.alpha + 1.0 / res.b:
        assert not res.reject
