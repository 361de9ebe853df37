import json
import subprocess
import sys

import pytest

from zrp.cli import main

HOMOG = {"experiment": "homogenize", "d": 1, "N": [16, 64], "trials": 3, "seed": 2,
         "environment": {"kind": "iid_uniform", "eps": 0.5}}


@pytest.fixture
def homog_config(tmp_path):
    p = tmp_path / "h.json"
    p.write_text(json.dumps(HOMOG))
    return p


def test_run_and_report(tmp_path, homog_config, capsys):
    out = tmp_path / "out"
    assert main(["homogenize", str(homog_config), "--out", str(out)]) == 0
    assert "overall: PASS" in capsys.readouterr().out
    assert main(["report", str(out)]) == 0
    first = {n: (out / n).read_bytes() for n in ("rows.csv", "summary.json")}
    assert main(["run", str(homog_config), "--out", str(out), "--workers", "2"]) == 0
    assert first == {n: (out / n).read_bytes() for n in ("rows.csv", "summary.json")}


def test_seed_override_changes_rows(tmp_path, homog_config):
    main(["run", str(homog_config), "--out", str(tmp_path / "a")])
    main(["run", str(homog_config), "--out", str(tmp_path / "b"), "--seed", "3"])
    assert (tmp_path / "a" / "rows.csv").read_bytes() != (tmp_path / "b" / "rows.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "summary.json").read_text())["config"]["seed"] == 3


def test_failing_criterion_exit_code(tmp_path, capsys):
    cfg = {"experiment": "hydro", "N": [8, 16], "T": 0.005, "trials": 2, "seed": 1,
           "rho0": {"const": 1.0, "terms": [{"k": [1], "sin": 0.5}]}, "params": {"pde_dx": 1 / 32},
           "tolerances": {"l2_final": 1e-9}, "g": {"kind": "linear", "slope": 1.0},
           "environment": {"kind": "constant", "c": 1.0}}
    p = tmp_path / "f.json"
    p.write_text(json.dumps(cfg))
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "overall: FAIL" in capsys.readouterr().out


def test_usage_errors(tmp_path, homog_config, capsys):
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(dict(HOMOG, N=[64, 16])))
    assert main(["run", str(bad)]) == 2
    assert main(["suite", str(homog_config)]) == 2
    other = tmp_path / "hy.json"
    other.write_text(json.dumps({"experiment": "hydro", "N": [8], "rho0": {"const": 1.0}}))
    assert main(["homogenize", str(other)]) == 2
    with pytest.raises(SystemExit):
        main(["explode"])
    capsys.readouterr()


def test_tampered_report_is_flagged(tmp_path, homog_config, capsys):
    out = tmp_path / "out"
    main(["run", str(homog_config), "--out", str(out)])
    summary = json.loads((out / "summary.json").read_text())
    summary["criteria"][0]["passed"] = not summary["criteria"][0]["passed"]
    (out / "summary.json").write_text(json.dumps(summary))
    assert main(["report", str(out)]) == 1
    assert "disagree" in capsys.readouterr().out


def test_entry_point(tmp_path, homog_config):
    proc = subprocess.run([sys.executable, "-m", "zrp.cli", "run", str(homog_config), "--out", str(tmp_path / "e")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "e" / "digest.txt").exists()


def test_suite_subset(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"experiment": "property_suite", "N": [16], "seed": 1,
                             "params": {"audits": ["fugacity", "ensembles"]}}))
    assert main(["suite", str(p), "--out", str(tmp_path / "s")]) == 0
    text = capsys.readouterr().out
    assert "[1] fugacity_identity" in text and "[11] ensembles_rho1" in text
