import csv
import hashlib
import json

import numpy as np
import pytest

from oawm import cli
from oawm.scenario import (ScenarioError, build_adc, build_budget_params, build_comb, build_frontend,
                           load_scenario, parse_override, parse_value)


def test_parse_value():
    assert parse_value("auto") is None
    assert parse_value("true") is True
    assert parse_value("[1, 2.5, x]") == [1, 2.5, "x"]
    assert parse_value("-inf") == -np.inf
    assert parse_value("'abc'") == "abc"
    assert parse_override("adc.B=20e9") == ("adc", "B", 20e9)
    with pytest.raises(ScenarioError):
        parse_override("adcB20")
    with pytest.raises(ScenarioError):
        parse_override("a.b.c=1")


def test_defaults_encode_system_table():
    sc = load_scenario()
    assert sc["comb"]["N"] == 4 and sc["comb"]["f_FSR"] == 40e9
    assert sc["adc"]["B"] == 21e9 and sc["adc"]["C1"] == 150e12
    assert sc["frontend"]["CMRR_dB"] == -30 and sc["frontend"]["LOSPR_dB"] == 10
    assert sc["budget"]["OSNR_sig_dB"] == 40 and sc["budget"]["OSNR_LO_dB"] == 48
    fe = build_frontend(sc)
    comb = build_comb(sc, fe)
    assert comb.f_mu == pytest.approx([-60e9, -20e9, 20e9, 60e9])
    assert build_adc(sc).B == 21e9
    p = build_budget_params(sc, N=4, B_opt=160e9)
    assert p.B == 20e9


def test_unknown_key_reports_line(tmp_path):
    p = tmp_path / "s.ini"
    p.write_text("[adc]\nB = 20e9\n\n[comb]\nN = 4\nwobble = 3\n")
    with pytest.raises(ScenarioError) as exc:
        load_scenario(p)
    assert exc.value.line == 6
    assert "wobble" in str(exc.value) and "s.ini:6" in str(exc.value)


def test_type_error_reports_line(tmp_path):
    p = tmp_path / "s.ini"
    p.write_text("[comb]\n; comment\nN = four\n")
    with pytest.raises(ScenarioError) as exc:
        load_scenario(p)
    assert exc.value.line == 3


def test_unknown_section_and_override():
    with pytest.raises(ScenarioError, match="unknown key"):
        load_scenario(None, ["adc.Bogus=1"])
    with pytest.raises(ScenarioError, match="one of"):
        load_scenario(None, ["reconstruction.drift=sometimes"])
    assert load_scenario(None, ["reconstruction.drift=true"])["reconstruction"]["drift"] == "true"


def test_hash_is_key_order_independent(tmp_path):
    a = tmp_path / "a.ini"
    b = tmp_path / "b.ini"
    a.write_text("[adc]\nB = 20e9\nf_s = 50e9\n[comb]\nN = 4\n")
    b.write_text("[comb]\nN = 4\n[adc]\nf_s = 50e9\nB = 20e9\n")
    assert load_scenario(a).hash == load_scenario(b).hash
    assert load_scenario(a).hash != load_scenario().hash


def test_json_scenario_equivalent(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"adc": {"B": 20e9}, "comb": {"N": 4}}, indent=1))
    q = tmp_path / "s.ini"
    q.write_text("[adc]\nB = 20e9\n[comb]\nN = 4\n")
    assert load_scenario(p).hash == load_scenario(q).hash
    bad = tmp_path / "bad.json"
    bad.write_text('{\n "adc": {\n  "Bx": 1\n }\n}\n')
    with pytest.raises(ScenarioError) as exc:
        load_scenario(bad)
    assert exc.value.line == 3


def test_to_ini_roundtrip(tmp_path):
    sc = load_scenario(None, ["drift.phi_F=[0, 1, 2, 3]", "adc.clock_spur_dBc=-60"])
    p = tmp_path / "r.ini"
    p.write_text(sc.to_ini())
    assert load_scenario(p).hash == sc.hash


# --------------------------------------------------------------------------
# command line


def test_validate_defaults(capsys):
    assert cli.main(["validate"]) == 0
    assert "ok" in capsys.readouterr().out


def test_validate_rejects_narrow_adc(capsys):
    assert cli.main(["validate", "--set", "adc.B=15e9"]) == 1
    assert "f_FSR/2" in capsys.readouterr().out


def test_validate_warns_without_pilots(capsys):
    assert cli.main(["validate", "--set", "signal.kind=cw", "--set", "signal.pilots=false"]) == 0
    assert "warning" in capsys.readouterr().out


def test_schema_error_exit_code(capsys):
    assert cli.main(["budget", "--set", "comb.N=many"]) == 2
    assert "comb.N" in capsys.readouterr().err


def test_module_error_exit_code(tmp_path, capsys):
    code = cli.main(["budget", "--out", str(tmp_path), "--set", "budget.N=1", "--Bopt", "400e9"])
    assert code == 1


def test_budget_fig9(tmp_path):
    assert cli.main(["budget", "--figure", "fig9", "--Bopt", "200e9", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "fig9_budget_vs_N.csv").open(newline="")))
    assert [int(r["N"]) for r in rows] == list(range(1, 33))
    assert all(float(r["B_opt"]) == 200e9 for r in rows)
    assert (tmp_path / "plot_fig9_budget_vs_N.py").exists()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["scenario_hash"] == load_scenario().hash
    for name, digest in man["files"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
    side = json.loads((tmp_path / "fig9_budget_vs_N.csv.json").read_text())
    assert side["scenario_hash"] == man["scenario_hash"]
    assert "timestamp" not in json.dumps(man)


def test_artifacts_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["reconstruct", "--out", str(d), "--seed", "7",
                         "--set", "signal.duration=20e-9"]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert "stitched_spectrum.csv" in files and "reconstruction.json" in files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    rec = json.loads((a / "reconstruction.json").read_text())
    assert rec["relative_error_dB"] < -20


def test_simulate_writes_containers(tmp_path):
    from oawm.signalkit import read_waveform

    assert cli.main(["simulate", "--out", str(tmp_path), "--set", "signal.duration=20e-9"]) == 0
    w = read_waveform(tmp_path / "records_I1.bin")
    assert w.sample_rate == 50e9 and len(w) == 1000
    meta = json.loads((tmp_path / "simulate.json").read_text())
    assert meta["N"] == 4


def test_calibrate_then_metrics(tmp_path):
    comb = "comb.f_FSR=39.96e9"
    cal_dir = tmp_path / "cal"
    assert cli.main(["calibrate", "--out", str(cal_dir), "--set", comb,
                     "--set", "calibration.n_shots=2"]) == 0
    info = json.loads((cal_dir / "calibrate.json").read_text())
    assert info["relative_error_dB"] < -30
    out = tmp_path / "m"
    assert cli.main(["metrics", "--out", str(out), "--calibration", str(cal_dir / "calibration.json"),
                     "--set", comb,
                     "--set", "frontend.noise=none"]) == 0
    assert json.loads((out / "metrics.json").read_text())["relative_error_dB"] < -25


def test_repro_fig6_and_fig10b(tmp_path):
    assert cli.main(["repro", "--figure", "fig6", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "fig6_adc_sinad.csv").open(newline="")))
    assert len(rows) == 41
    assert cli.main(["repro", "--figure", "fig10b", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "fig10b_ase.csv").open(newline="")))
    assert "OSNR_40dB" in rows[0]


def test_repro_needs_figure(capsys):
    assert cli.main(["repro"]) == 2


def test_sweep(tmp_path):
    assert cli.main(["sweep", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "fig8_budget_vs_Bopt.csv").exists()
    assert (tmp_path / "fig9_budget_vs_N.csv").exists()
