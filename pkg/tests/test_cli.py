import csv
import importlib
import io
import json
import subprocess
import sys

import pytest

from sqzchain.chain import amplified_readout
from sqzchain.cli import ConfigError, RunConfig, emit_config, load_config, parse_config, run

cli_main = importlib.import_module("sqzchain.cli.main")

LOSSLESS = """
[budget]
eta_opo = 1
eta_opa = 1
eta_mode_match = 1
eta_prop_other = 1
visibility = 1
eta_pd = 1
[pump]
g_opo = 4
[jitter]
theta_opo = 0
theta_opa = 0
theta_direct = 0
"""

PD_ONLY = "[budget]\nvisibility_in_detection = false\n"


def invoke(args, stdin_text=""):
    out = io.StringIO()
    code = run(args, stdout=out, stdin=io.StringIO(stdin_text))
    return code, out.getvalue()


def budget_json(tmp_path, text=None, extra=()):
    args = ["budget", "--json", *extra]
    if text is not None:
        path = tmp_path / "run.cfg"
        path.write_text(text)
        args += ["--config", str(path)]
    code, out = invoke(args)
    assert code == 0
    return json.loads(out)


# --- config ------------------------------------------------------------------


def test_bundled_fixture_holds_characterised_values():
    cfg = load_config("paper_table1")
    b = cfg.budget
    assert (b.eta_opo, b.eta_opa, b.eta_mode_match, b.eta_prop_other, b.visibility, b.eta_pd) == (
        0.982,
        0.973,
        0.97,
        0.99,
        0.98,
        0.74,
    )
    assert (cfg.theta_direct, cfg.theta_opo, cfg.theta_opa) == (0.046, 0.033, 0.218)
    assert cfg.x_opo.gain() == pytest.approx(10.0) and cfg.x_opa.gain() == pytest.approx(12.0)


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match="line 3: unknown key 'eta_foo'"):
        parse_config("# comment\n[budget]\neta_foo = 0.5\n")


def test_invalid_value_reports_key_and_constraint(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("[budget]\neta_pd = 1.3\n")
    code, _ = invoke(["budget", "--config", str(path)])
    assert code == 1
    err = capsys.readouterr().err
    assert "line 2" in err and "eta_pd" in err and "[0, 1]" in err


@pytest.mark.parametrize(
    "text",
    [
        "[nope]\n",
        "eta_pd = 0.5\n",
        "[pump]\ng_opo = 0.5\n",
        "[pump]\ng_opo = 4\nx_opo = 0.5\n",
        "[jitter]\ntheta_opo = 2\n",
        "[run]\nseed = 1.5\n",
        "[run]\nsweep_variable = temperature\n",
        "[budget]\neta_pd\n",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_emit_config_roundtrip():
    cfg = parse_config("[pump]\ng_opo = 7.3\n[run]\namplification_db = 12\n[budget]\nvisibility_in_detection = no\n")
    again = parse_config(emit_config(cfg))
    assert again == cfg
    assert load_config("paper_fig5") == parse_config(emit_config(load_config("paper_fig5")))


def test_emit_config_flag(tmp_path):
    code, text = invoke(["--config", "paper_fig5", "--seed", "5", "--emit-config"])
    assert code == 0
    cfg = parse_config(text)
    assert cfg.run.seed == 5 and cfg.x_opa.gain() == pytest.approx(19.0)


def test_usage_errors_exit_one():
    assert invoke([])[0] == 1
    assert invoke(["budget", "--bogus"])[0] == 1
    assert invoke(["frobnicate"])[0] == 1
    assert invoke(["budget", "--config", "/nonexistent/x.cfg"])[0] == 1


# --- budget ------------------------------------------------------------------


def test_budget_at_table_values(tmp_path):
    r = budget_json(tmp_path)
    assert r["squeezing_without_opa_db"] == pytest.approx(-4.3, abs=0.5)
    assert r["squeezing_with_opa_db"] == pytest.approx(-8.1, abs=1.0)
    assert r["eta_eff"] == pytest.approx(0.953, abs=0.003)
    pd = budget_json(tmp_path, PD_ONLY)
    assert pd["eta_eff"] == pytest.approx(0.953, abs=5e-4)
    assert pd["g_int"] == pytest.approx(1.245, abs=1e-3)


def test_budget_below_compensation_warns(tmp_path, capsys):
    r = budget_json(tmp_path, PD_ONLY + "[pump]\ng_opa = 1\n")
    assert r["eta_eff"] == pytest.approx(0.662, abs=5e-4)
    assert r["warnings"] and "below the loss-compensation gain" in r["warnings"][0]
    assert "warning:" in capsys.readouterr().err


def test_budget_lossless_is_symmetric(tmp_path):
    r = budget_json(tmp_path, LOSSLESS)
    # 20*log10((1+x)/(1-x)) at x = 1/2
    assert r["antisqueezing_without_opa_db"] == pytest.approx(9.54, abs=5e-3)
    assert r["squeezing_without_opa_db"] == pytest.approx(-9.54, abs=5e-3)
    assert r["squeezing_with_opa_db"] == pytest.approx(-r["antisqueezing_with_opa_db"], abs=1e-7)
    assert r["squeezing_with_opa_db"] == pytest.approx(-9.54, abs=5e-3)
    assert r["x_int"] is None


def test_budget_human_report():
    code, out = invoke(["budget"])
    assert code == 0
    assert "squeezing_with_opa_db: -7.8" in out


# --- sweep -------------------------------------------------------------------


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_sweep_header_and_rows():
    code, out = invoke(["sweep", "--variable", "g_opa", "--range", "1", "20", "39"])
    assert code == 0
    assert out.splitlines()[0] == "var_name,var_value,x_opo,x_opa,eta_eff,v_minus_db,v_plus_db,v_eff_minus_db,v_eff_plus_db"
    rows = _rows(out)
    assert len(rows) == 39
    gains = [float(r["var_value"]) for r in rows]
    assert gains == sorted(gains)


def test_sweep_efficiency_crosses_at_compensation_gain(tmp_path):
    path = tmp_path / "pd.cfg"
    path.write_text(PD_ONLY)
    code, out = invoke(["sweep", "--config", str(path), "--variable", "g_opa", "--range", "1", "1.5", "501"])
    rows = _rows(out)
    cross = next(r for r in rows if float(r["eta_eff"]) >= 0.74)
    assert float(cross["var_value"]) == pytest.approx(1.245, abs=2e-3)
    eta = [float(r["eta_eff"]) for r in rows]
    assert eta[0] < 0.74 < eta[-1]


@pytest.mark.parametrize("g_opa", ["4", "5.7", "12"])
def test_sweep_curve_families(tmp_path, g_opa):
    path = tmp_path / "f.cfg"
    path.write_text(f"[pump]\ng_opa = {g_opa}\n")
    code, out = invoke(["sweep", "--config", str(path), "--variable", "g_opo", "--range", "1", "20", "20"])
    rows = _rows(out)
    sq = [float(r["v_eff_minus_db"]) for r in rows]
    anti = [float(r["v_eff_plus_db"]) for r in rows]
    assert sq[0] == pytest.approx(0.0, abs=1e-9) and anti[0] == pytest.approx(0.0, abs=1e-9)
    assert min(sq) < -5 and anti == sorted(anti)


def test_single_point_sweep_equals_budget():
    code, out = invoke(["sweep", "--values", "10"])
    (row,) = _rows(out)
    code, rep = invoke(["budget", "--json"])
    rep = json.loads(rep)
    assert float(row["v_eff_minus_db"]) == pytest.approx(rep["squeezing_with_opa_db"], rel=1e-8)
    assert float(row["v_minus_db"]) == pytest.approx(rep["squeezing_without_opa_db"], rel=1e-8)
    assert float(row["eta_eff"]) == pytest.approx(rep["eta_eff"], rel=1e-8)


def test_sweep_errors():
    assert invoke(["sweep", "--values", ""])[0] == 1
    assert invoke(["sweep", "--range", "1", "20", "0"])[0] == 1
    assert invoke(["sweep", "--values", "0.5,2"])[0] == 1
    assert invoke(["sweep", "--values", "abc"])[0] == 1


def test_sweep_is_byte_identical_and_seeded():
    a = invoke(["sweep", "--noise-db", "0.1", "--seed", "3"])[1]
    b = invoke(["sweep", "--noise-db", "0.1", "--seed", "3"])[1]
    c = invoke(["sweep", "--noise-db", "0.1", "--seed", "4"])[1]
    assert a == b and a != c


def test_numbers_use_nine_significant_digits():
    out = invoke(["sweep", "--values", "3"])[1]
    row = out.splitlines()[1].split(",")
    assert row[2] == f"{1 - 1 / 3 ** 0.5:.9g}"


# --- fit ---------------------------------------------------------------------


def test_fit_roundtrip_from_sweep(tmp_path):
    cfg = tmp_path / "rt.cfg"
    cfg.write_text("[jitter]\ntheta_opa = 0\n")
    _, data = invoke(["sweep", "--config", str(cfg), "--values", "1.5,2,3,5,8,12,16", "--noise-db", "0.05", "--seed", "2"])
    code, out = invoke(["fit", "-", "--model", "amplified", "--config", str(cfg), "--sigma-db", "0.05", "--json"], data)
    assert code == 0
    r = json.loads(out)
    chain = load_config(str(cfg)).chain()
    truth_eta = chain.budget.eta_sqz_tilde * amplified_readout(chain).eta_eff
    assert abs(r["params"]["eta"] - truth_eta) <= 3 * r["stderr"]["eta"]
    assert abs(r["params"]["theta"] - 0.033) <= 3 * r["stderr"]["theta"]
    assert r["n_dof"] == 2 * 7 - 2


def test_fit_direct_from_measurement_file(tmp_path):
    _, data = invoke(["sweep", "--values", "2,4,8,16"])
    path = tmp_path / "m.csv"
    rows = _rows(data)
    with open(path, "w") as fh:
        fh.write("gain_opo,v_minus_db,v_plus_db,sigma_db\n")
        for r in rows:
            g = 1 / (1 - float(r["x_opo"])) ** 2
            fh.write(f"{g:.12g},{r['v_minus_db']},{r['v_plus_db']},0.1\n")
    code, out = invoke(["fit", str(path), "--json", "--bootstrap", "100"])
    assert code == 0
    r = json.loads(out)
    assert r["params"]["eta"] == pytest.approx(load_config(None).budget.eta_direct, abs=1e-6)
    assert r["params"]["theta"] == pytest.approx(0.046, abs=1e-6)
    assert r["uncertainty_method"] == "bootstrap-parametric"
    assert set(r["jacobian_stderr"]) == {"eta", "theta"}


def test_fit_rank_deficiency_exit_code(capsys):
    data = "gain_opo,v_minus_db,v_plus_db,sigma_db\n4,-3,8,0.2\n8,-4,11,0.2\n"
    code, _ = invoke(["fit", "-", "--model", "amplified", "--free", "eta_sqz,eta_eff,theta"], data)
    assert code == 3
    assert "rank deficient" in capsys.readouterr().err


def test_fit_malformed_csv_reports_row(capsys):
    data = "gain_opo,v_minus_db,v_plus_db,sigma_db\n4,-3,8,0.2\n8,oops,11,0.2\n"
    assert invoke(["fit", "-"], data)[0] == 2
    assert "row 3" in capsys.readouterr().err
    assert invoke(["fit", "-"], "a,b,c\n1,2,3\n")[0] == 2
    assert invoke(["fit", "-"], "gain_opo,v_minus_db,v_plus_db,sigma_db\n4,-3,8\n")[0] == 2
    assert invoke(["fit", "-"], "gain_opo,v_minus_db,v_plus_db,sigma_db\n0.5,-3,8,0.2\n2,-1,3,0.2\n")[0] == 2
    assert invoke(["fit", "-"], "")[0] == 2
    assert invoke(["fit", "/nonexistent.csv"])[0] == 2


def test_fit_extract_effective_efficiency(tmp_path):
    cfg = tmp_path / "x.cfg"
    cfg.write_text("[budget]\neta_prop_other = 1\nvisibility_in_detection = false\n[jitter]\ntheta_opa = 0\n")
    _, data = invoke(["sweep", "--config", str(cfg), "--values", "1.5,3,6,10,15"])
    code, out = invoke(
        ["fit", "-", "--model", "amplified", "--extract-eta-eff", "--eta-sqz-tilde", "0.9525", "--json"], data
    )
    assert code == 0
    r = json.loads(out)["eta_eff"]
    assert r["value"] == pytest.approx(0.953, abs=max(r["sigma"], 1e-3))
    assert r["flags"] == []


def test_extract_requires_amplified_model():
    _, data = invoke(["sweep", "--values", "2,4,8"])
    assert invoke(["fit", "-", "--extract-eta-eff"], data)[0] == 1


def test_fit_fix_option():
    _, data = invoke(["sweep", "--values", "2,4,8"])
    code, out = invoke(["fit", "-", "--fix", "theta=0.046", "--json"], data)
    r = json.loads(out)
    assert code == 0 and list(r["params"]) == ["eta"] and r["fixed"] == {"theta": 0.046}
    assert invoke(["fit", "-", "--fix", "theta"], data)[0] == 1


# --- oracle-check ------------------------------------------------------------


def test_oracle_check_default_passes():
    code, out = invoke(["oracle-check", "--json"])
    r = json.loads(out)
    assert code == 0 and r["passed"] and r["n_random"] == 1000
    assert r["max_rel_deviation"] <= 1e-9


def test_oracle_check_single_case_is_deterministic():
    a = invoke(["oracle-check", "--n-random", "1", "--seed", "42"])
    b = invoke(["oracle-check", "--n-random", "1", "--seed", "42"])
    assert a == b and a[0] == 0
    assert "worst_case" in a[1]


def test_oracle_check_catches_corrupted_formula(monkeypatch, capsys):
    from dataclasses import replace

    def corrupted(cfg):
        pred = amplified_readout(cfg)
        return replace(pred, v_eff_minus=pred.v_eff_minus * (1 + 1e-6))

    report = cli_main.oracle_check(20, seed=0, closed_form=corrupted)
    assert not report["passed"] and report["worst_quantity"] == "v_eff_minus"
    monkeypatch.setattr(cli_main, "amplified_readout", corrupted)
    code, out = invoke(["oracle-check", "--n-random", "10"])
    assert code == 4
    assert "worst_case" in out and "oracle mismatch" in capsys.readouterr().err


def test_oracle_check_rejects_zero_cases():
    assert invoke(["oracle-check", "--n-random", "0"])[0] == 1


# --- spectra -----------------------------------------------------------------


def _traces(text):
    rows = _rows(text)
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


def test_spectra_operating_point(capsys):
    code, out = invoke(["spectra", "--config", "paper_table1", "--json"])
    assert code == 0
    assert out.splitlines()[0] == "bin_index,time_s,squeezing,antisqueezing,amplified_shot,shot"
    t = _traces(out)
    mean = lambda k: sum(t[k]) / len(t[k])  # noqa: E731
    assert mean("squeezing") - mean("amplified_shot") == pytest.approx(-8.1, abs=1.0)
    summary = json.loads(capsys.readouterr().err)
    assert summary["observed_squeezing_db"] == pytest.approx(-8.1, abs=1.0)


def test_spectra_dark_limited_configuration(capsys):
    code, out = invoke(["spectra", "--config", "paper_fig5", "--json"])
    assert code == 0
    assert out.splitlines()[0].endswith("amplified_shot,shot,dark")
    s = json.loads(capsys.readouterr().err)
    assert -6.5 - 1.5 <= s["observed_squeezing_db"] <= -6.5 + 1.5
    assert s["clearance_unamplified_db"] == 1.0 and s["clearance_amplified_db"] == 13.0
    assert s["observed_squeezing_unamplified_db"] - s["model_squeezing_db"] >= 3.0


def test_spectra_zero_scatter_is_flat():
    t = _traces(invoke(["spectra", "--zero-scatter", "--n-bins", "10"])[1])
    for k in ("squeezing", "antisqueezing", "amplified_shot", "shot"):
        assert len(set(t[k])) == 1
    assert t["amplified_shot"][0] == 0.0
    assert t["time_s"][1] == pytest.approx(1e-3)


def test_spectra_deterministic_and_out_file(tmp_path):
    path = tmp_path / "t.csv"
    code, printed = invoke(["spectra", "--seed", "7", "--out", str(path)])
    assert code == 0 and printed == ""
    again = invoke(["spectra", "--seed", "7"])[1]
    assert path.read_text() == again


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sqzchain", "budget", "--json"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["g_opa"] == 12.0
    bad = subprocess.run([sys.executable, "-m", "sqzchain", "budget", "--nope"], capture_output=True, text=True)
    assert bad.returncode == 1


def test_default_config_is_table_fixture():
    assert load_config(None).chain() == load_config("paper_table1").chain()
    assert isinstance(load_config(None), RunConfig)
