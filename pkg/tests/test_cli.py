"""End-to-end command-line checks: exit codes, report shape, and
byte-level determinism of the emitted JSON."""

import csv
import io
import json

import numpy as np
import pytest

from ltbounds.cli import main
from ltbounds.data import ingest
from ltbounds.simlab import population_tables, random_cell_table, sample_from_table

from conftest import dgp_variants


def _write_dataset(ds, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y2", "y1", "w", "x", "g"])
        for obs in ds.rows():
            writer.writerow(["" if obs.y2 is None else obs.y2,
                             obs.y1, obs.w, obs.x, obs.g])


@pytest.fixture
def table_csv(tmp_path):
    ct = random_cell_table(17)
    ds = sample_from_table(ct, share_e=0.5, n=2000, seed=9)
    path = tmp_path / "data.csv"
    _write_dataset(ds, path)
    return str(path)


@pytest.fixture
def dgp_csv(tmp_path):
    # every (y1, w, x, g) cell populated, as the dml fit requires
    pop = population_tables(*dgp_variants(1)[0])
    ds = sample_from_table(pop.ct, share_e=0.5, n=4000, seed=2)
    path = tmp_path / "dgp.csv"
    _write_dataset(ds, path)
    return str(path)


def _run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# -- plumbing ---------------------------------------------------------


def test_version_flag(capsys):
    code, out, _ = _run(capsys, ["--version"])
    assert code == 0
    assert out.strip()


def test_unknown_flag_is_usage_error(capsys):
    code, _, _ = _run(capsys, ["estimate", "--no-such-flag"])
    assert code == 2


def test_missing_subcommand_is_usage_error(capsys):
    code, _, _ = _run(capsys, [])
    assert code == 2


def test_missing_input_file(capsys, tmp_path):
    code, _, err = _run(capsys, ["estimate", "--input", str(tmp_path / "nope.csv")])
    assert code == 2
    assert "error:" in err


def test_malformed_data_is_exit_three(capsys, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y2,y1,w,x,g\n1,0,1,0,O\n5,0,1,0,O\n,0,1,0,E\n")
    code, _, err = _run(capsys, ["estimate", "--input", str(path)])
    assert code == 3
    assert "error:" in err


def test_timing_goes_to_stderr_not_report(capsys, table_csv):
    code, out, err = _run(capsys, ["bounds", "--input", table_csv])
    assert code == 0
    assert "wall-clock" in err
    assert "wall-clock" not in out


# -- estimate ---------------------------------------------------------


def test_estimate_report_shape(capsys, table_csv):
    code, out, _ = _run(capsys, ["estimate", "--input", table_csv])
    assert code == 0
    payload = json.loads(out)
    assert set(payload) == {"version", "config", "seed", "results"}
    est = payload["results"]["estimands"]
    assert set(est) == {"naive", "lu_att", "ecb_att", "nsd_atets"}
    assert set(payload["results"]["bounds"]) == {"worstcase", "fh"}
    assert "sensitivity_curve" in payload["results"]


def test_estimate_byte_identical_file_and_stdout(capsys, table_csv, tmp_path):
    code, out1, _ = _run(capsys, ["estimate", "--input", table_csv])
    code2, out2, _ = _run(capsys, ["estimate", "--input", table_csv])
    target = tmp_path / "report.json"
    code3, out3, _ = _run(capsys, ["estimate", "--input", table_csv,
                                   "--output", str(target)])
    assert code == code2 == code3 == 0
    assert out1 == out2
    assert out3 == ""
    assert target.read_text() == out1


def test_estimate_markdown_table(capsys, table_csv):
    code, out, _ = _run(capsys, ["estimate", "--input", table_csv,
                                 "--format", "markdown"])
    assert code == 0
    assert "| Naive | LU | ECB | bounds |" in out
    assert "Worst-case interval" in out


def test_estimate_bad_rho_bars(capsys, table_csv):
    code, _, err = _run(capsys, ["estimate", "--input", table_csv,
                                 "--rho-bars", "0,abc"])
    assert code == 2
    assert "rho-bars" in err


# -- bounds / sensitivity --------------------------------------------


def test_bounds_report_shape(capsys, table_csv):
    code, out, _ = _run(capsys, ["bounds", "--input", table_csv])
    assert code == 0
    res = json.loads(out)["results"]
    assert res["worstcase"]["upper"] - res["worstcase"]["lower"] >= 1.0 - 1e-9
    assert res["fh"]["lower"] <= res["fh"]["upper"]
    assert isinstance(res["bracketing"]["bracket_ok"], bool)


def test_sensitivity_curve(capsys, table_csv):
    code, out, _ = _run(capsys, ["sensitivity", "--input", table_csv,
                                 "--rho-bars", "0,1,2"])
    assert code == 0
    curve = json.loads(out)["results"]["curve"]
    assert [pt["rho_bar"] for pt in curve] == [0.0, 1.0, 2.0]
    assert curve[1]["delta"] == pytest.approx(0.0, abs=1e-12)


# -- sharp-set --------------------------------------------------------


def test_sharp_set_unrestricted(capsys, table_csv):
    code, out, _ = _run(capsys, ["sharp-set", "--input", table_csv])
    assert code == 0
    res = json.loads(out)["results"]
    assert res["status"] in ("optimal", "denominator_vanishes")
    assert -1.0 - 1e-9 <= res["lower"] <= res["upper"] <= 1.0 + 1e-9
    assert json.loads(out)["config"]["restrictions"] == []


def test_sharp_set_deterministic_bytes(capsys, table_csv):
    argv = ["sharp-set", "--input", table_csv, "--lu", "--grid-points", "11"]
    code1, out1, _ = _run(capsys, argv)
    code2, out2, _ = _run(capsys, argv)
    assert code1 == code2 == 0
    assert out1 == out2


def test_sharp_set_infeasible_emits_certificate(capsys, tmp_path):
    # untreated short-term outcomes disagree across groups while both
    # treated arms are too thin to absorb the gap, so no common latent
    # mixture exists
    path = tmp_path / "clash.csv"
    rows = ["y2,y1,w,x,g"]
    rows += ["0,0,0,0,O"] * 45 + ["1,0,0,0,O"] * 45 + ["1,0,1,0,O"] * 2
    rows += [",1,0,0,E"] * 90 + [",0,1,0,E"] * 2
    path.write_text("\n".join(rows) + "\n")
    code, out, err = _run(capsys, ["sharp-set", "--input", str(path), "--ev"])
    assert code == 3
    payload = json.loads(out)
    assert payload["results"]["status"] == "infeasible"
    assert payload["results"]["certificate"]
    assert "error:" in err


# -- test -------------------------------------------------------------


def test_specification_test_fosd(capsys, table_csv):
    code, out, _ = _run(capsys, ["test", "--input", table_csv,
                                 "--which", "fosd", "--boot", "500"])
    assert code == 0
    res = json.loads(out)["results"]
    assert res["moment_labels"] == ["fosd:y0"]
    assert 0.0 <= res["p_value"] <= 1.0
    assert res["reject"] == (res["statistic"] > res["critical_value"])


def test_specification_test_needs_instrument(capsys, table_csv):
    code, _, err = _run(capsys, ["test", "--input", table_csv,
                                 "--which", "external-validity",
                                 "--assumption", "ex"])
    assert code == 3
    assert "instrument" in err


def test_specification_test_with_instrument(capsys, tmp_path):
    rng = np.random.default_rng(3)
    rows = ["y2,y1,w,x,g,z"]
    for _ in range(150):
        rows.append("%d,%d,%d,0,O,%d" % (rng.integers(0, 2), rng.integers(0, 2),
                                         rng.integers(0, 2), rng.integers(0, 2)))
    for _ in range(150):
        rows.append(",%d,%d,0,E,%d" % (rng.integers(0, 2), rng.integers(0, 2),
                                       rng.integers(0, 2)))
    path = tmp_path / "iv.csv"
    path.write_text("\n".join(rows) + "\n")
    code, out, _ = _run(capsys, ["test", "--input", str(path),
                                 "--which", "external-validity",
                                 "--assumption", "ex",
                                 "--instrument-column", "z", "--boot", "200"])
    assert code == 0
    labels = json.loads(out)["results"]["moment_labels"]
    assert any(lbl.startswith("ex:") for lbl in labels)


# -- dml --------------------------------------------------------------


def test_dml_report(capsys, dgp_csv):
    code, out, _ = _run(capsys, ["dml", "--input", dgp_csv, "--folds", "4"])
    assert code == 0
    res = json.loads(out)["results"]
    assert res["ci"][0] < res["tau_hat"] < res["ci"][1]
    assert len(res["fold_estimates"]) == 4
    assert res["n"] == 4000


def test_dml_bad_folds(capsys, dgp_csv):
    code, _, _ = _run(capsys, ["dml", "--input", dgp_csv, "--folds", "1"])
    assert code == 2


# -- simulate ---------------------------------------------------------


SIM_CONFIG = {
    "outcome": {
        "alpha": {"type": "discrete", "values": [-0.6, -0.2, 0.5, 2.0],
                  "probs": [0.25, 0.25, 0.3, 0.2]},
        "lambda1": 0.0, "lambda2": 0.0,
        "eps": {"type": "discrete", "values": [-1.0, 1.0], "probs": [0.5, 0.5]},
        "delta": {"kind": "constant", "d1": 0.3, "d2": 2.5},
    },
    "selection": {"mechanism": "AC", "beta": 0.0, "c": -1.3},
    "n": 4000,
    "share_e": 0.5,
    "seed": 11,
}


def test_simulate_round_trip(capsys, tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps(SIM_CONFIG))
    out_csv = tmp_path / "sim.csv"
    code, out, _ = _run(capsys, ["simulate", "--config", str(cfg),
                                 "--output-csv", str(out_csv)])
    assert code == 0
    payload = json.loads(out)
    assert payload["results"]["n"] == 4000
    diag = payload["results"]["population_diagnostics"]
    assert diag["lu"] < 1e-10
    assert diag["ecb"] > 0.01
    # the emitted CSV feeds straight back into the loaders
    with open(out_csv) as fh:
        ds = ingest(fh, n_cells=1)
    assert ds.n == 4000
    assert ds.n_e + ds.n_o == 4000

    code2, out2, _ = _run(capsys, ["simulate", "--config", str(cfg),
                                   "--output-csv", str(out_csv)])
    assert code2 == 0
    assert out2 == out


def test_simulate_gaussian_skips_population_block(capsys, tmp_path):
    cfg_json = json.loads(json.dumps(SIM_CONFIG))
    cfg_json["outcome"]["alpha"] = {"type": "gaussian", "mean": 0.0, "sd": 1.0}
    cfg_json["selection"] = {"mechanism": "AC", "beta": 0.0, "c": 0.0}
    cfg = tmp_path / "sim_g.json"
    cfg.write_text(json.dumps(cfg_json))
    code, out, _ = _run(capsys, ["simulate", "--config", str(cfg),
                                 "--output-csv", str(tmp_path / "g.csv")])
    assert code == 0
    assert json.loads(out)["results"]["population_diagnostics"] is None


def test_simulate_rejects_unknown_law(capsys, tmp_path):
    cfg_json = json.loads(json.dumps(SIM_CONFIG))
    cfg_json["outcome"]["alpha"] = {"type": "cauchy"}
    cfg = tmp_path / "sim_bad.json"
    cfg.write_text(json.dumps(cfg_json))
    code, _, err = _run(capsys, ["simulate", "--config", str(cfg),
                                 "--output-csv", str(tmp_path / "x.csv")])
    assert code == 2
    assert "unknown law" in err


# -- jobsearch --------------------------------------------------------


JS_CONFIG = {"w_low": 0.0, "w_bar": 1.0, "m": 200, "r": 0.05, "delta": 0.1,
             "lam": 0.5, "c0": 1.0, "b": 0.0}


def test_jobsearch_solve(capsys, tmp_path):
    cfg = tmp_path / "js.json"
    cfg.write_text(json.dumps(JS_CONFIG))
    code, out, _ = _run(capsys, ["jobsearch", "--config", str(cfg)])
    assert code == 0
    res = json.loads(out)["results"]
    assert res["s"][-1] == 0.0
    assert res["d_u"] > 0
    assert res["max_foc_residual"] < 1e-8
    assert res["theta_hat"] is None


def test_jobsearch_recovery(capsys, tmp_path):
    cfg = tmp_path / "js0.json"
    cfg.write_text(json.dumps(JS_CONFIG))
    code, out, _ = _run(capsys, ["jobsearch", "--config", str(cfg)])
    du_control = json.loads(out)["results"]["d_u"]

    treated = dict(JS_CONFIG, theta=0.6, omega=1)
    cfg_t = tmp_path / "js1.json"
    cfg_t.write_text(json.dumps(treated))
    code, out, _ = _run(capsys, ["jobsearch", "--config", str(cfg_t)])
    du_treated = json.loads(out)["results"]["d_u"]

    recov = dict(JS_CONFIG,
                 recover={"d_u_control": du_control, "d_u_treated": du_treated})
    cfg_r = tmp_path / "js2.json"
    cfg_r.write_text(json.dumps(recov))
    code, out, _ = _run(capsys, ["jobsearch", "--config", str(cfg_r)])
    assert code == 0
    theta_hat = json.loads(out)["results"]["theta_hat"]
    assert abs(theta_hat - 0.6) / 0.6 < 0.02


def test_jobsearch_bad_model_is_usage_error(capsys, tmp_path):
    cfg = tmp_path / "js_bad.json"
    cfg.write_text(json.dumps(dict(JS_CONFIG, m=10)))
    code, _, err = _run(capsys, ["jobsearch", "--config", str(cfg)])
    assert code == 2
    assert "grid points" in err
