import csv
import io
import json
import os
import subprocess
import sys

import pytest

from fermidet import cli


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_single_suite_passes_with_json(capsys):
    code, out, _ = run(["car", "--seed", "3"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["pass"] and rep["seed"] == 3 and set(rep["suites"]) == {"car"}
    assert rep["artifact"] == "fermidet" and "threads" not in rep["config"]


def test_csv_columns(capsys):
    code, out, _ = run(["decay", "--format", "csv"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["suite", "assertion", "relation", "observed", "bound", "margin", "pass"]
    assert {r[1] for r in rows[1:]} == {"metal_loglog_slope", "insulator_ratio"}
    assert all(r[6] == "True" for r in rows[1:])


def test_same_seed_same_bytes(capsys):
    argv = ["chrono-det", "--seed", "11"]
    assert run(argv, capsys)[1] == run(argv, capsys)[1]
    assert run(argv, capsys)[1] != run(["chrono-det", "--seed", "12"], capsys)[1]


def test_env_seed_and_flag_precedence(capsys, monkeypatch):
    monkeypatch.setenv("FERMIDET_SEED", "42")
    assert json.loads(run(["car"], capsys)[1])["seed"] == 42
    assert json.loads(run(["car", "--seed", "5"], capsys)[1])["seed"] == 5
    monkeypatch.setenv("FERMIDET_SEED", "x")
    assert run(["car"], capsys)[0] == 2


def test_config_file(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"trials": 200, "n_max": 3, "seed": 9}))
    code, out, _ = run(["det-bound", "--config", str(path)], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["config"]["trials"] == 200 and rep["seed"] == 9
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"trails": 3}))
    assert run(["car", "--config", str(bad)], capsys)[0] == 2
    assert run(["car", "--config", str(tmp_path / "missing.json")], capsys)[0] == 2


def test_threads_do_not_change_report(capsys):
    argv = ["det-bound", "--trials", "300", "--n-max", "3"]
    assert run(argv + ["--threads", "2"], capsys)[1] == run(argv, capsys)[1]


def test_config_and_domain_errors_exit_2(capsys):
    assert run(["nosuch"], capsys)[0] == 2
    assert run(["car", "--trials", "0"], capsys)[0] == 2
    assert run(["covariance", "--model", "nosuch"], capsys)[0] == 2
    code, _, err = run(["covariance", "--beta", "-1"], capsys)
    assert code == 2 and "error" in err
    # a Gram-constant hypothesis violation is a domain error
    assert run(["gram-ir", "--beta", "2"], capsys)[0] == 2


def test_assertion_failure_exit_1(capsys, monkeypatch):
    monkeypatch.setitem(cli.SUITE_FUNCS, "car", lambda cfg: {"assertions": [cli.check("forced", 2.0, 1.0)]})
    code, out, _ = run(["car"], capsys)
    assert code == 1 and json.loads(out)["pass"] is False


def test_check_relations():
    assert cli.check("a", 1.0, 1.0)["pass"]
    assert cli.check("a", 1.0 + 1e-12, 1.0)["pass"]
    assert not cli.check("a", 1.1, 1.0)["pass"]
    assert cli.check("b", 0.8, 0.7, "ge")["pass"]
    assert not cli.in_range("c", 0.8, 0.3, 0.7)["pass"]
    with pytest.raises(ValueError):
        cli.check("d", 0, 0, "lt")


def test_atomic_write(tmp_path, capsys):
    out = tmp_path / "r.json"
    out.write_text("old")
    code, stdout, _ = run(["decay", "--out", str(out)], capsys)
    assert code == 0 and stdout == ""
    assert json.loads(out.read_text())["pass"]
    assert [p.name for p in tmp_path.iterdir()] == ["r.json"]


def test_console_script_entry_point(tmp_path):
    env = {**os.environ, "FERMIDET_SEED": "1"}
    res = subprocess.run([sys.executable, "-m", "fermidet.cli", "car", "--format", "csv"], capture_output=True, text=True, env=env)
    assert res.returncode == 0 and res.stdout.startswith("suite,assertion")
