import json
import os

import numpy as np
import pytest

from crsn import cli, harness


def run_cli(capsys, *argv):
    code = cli.cli_main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_trace(capsys):
    code, out, _ = run_cli(capsys, "simulate", "--steps", "6", "--seed", "3")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].startswith("k,eta,epsilon,y0,xhat_prior0,trace_P_prior,trace_P_post")
    assert len(lines) == 7


def test_bounds_json(capsys):
    code, out, _ = run_cli(capsys, "bounds", "--Y", "1.0")
    assert code == 0
    doc = json.loads(out)
    assert doc["gamma"] == pytest.approx(0.43400, abs=1e-4)
    assert doc["x_lower"][0][0] <= doc["x_upper"][0][0]
    assert doc["x_zero"][0][0] <= doc["x_lower"][0][0] + 1e-9


def test_bounds_requires_exactly_one_trigger(capsys):
    code, _, err = run_cli(capsys, "bounds")
    assert code == 2
    assert "config error" in err


def test_design_open_json(capsys):
    code, out, _ = run_cli(capsys, "design-open", "--M", "1.6")
    assert code == 0
    doc = json.loads(out)
    assert doc["Y"][0][0] == pytest.approx(2.03533, abs=1e-4)
    assert doc["status"] == "optimal"


def test_design_open_infeasible_floor(capsys):
    # M below the scheduler-independent floor (X0 ~ 1.4263)
    code, _, err = run_cli(capsys, "design-open", "--M", "1.2")
    assert code == 2


def test_design_closed_json(capsys, tmp_path):
    trace_path = str(tmp_path / "trace.csv")
    code, out, _ = run_cli(capsys, "design-closed", "--M", "2.0", "--eps", "1e-4",
                           "--trace-out", trace_path)
    assert code == 0
    doc = json.loads(out)
    assert doc["status"] == "eps-optimal"
    assert doc["Upsilon_star"] - doc["upsilon_star"] <= 1e-4 + 1e-12
    lines = open(trace_path).read().splitlines()
    assert lines[0] == "stage,nu,Upsilon,open_nodes"
    assert len(lines) >= 2


def test_experiment_fig7_writes_csv(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "experiment", "fig7", "--out", str(tmp_path),
                           "--seed", "5", "--paths", "4", "--horizon", "400")
    assert code == 0
    path = out.strip().splitlines()[-1]
    assert os.path.exists(path)
    assert "fig7_" in os.path.basename(path)


def test_experiment_fig6_writes_two_csvs(capsys, tmp_path, monkeypatch):
    cfg_path = tmp_path / "cfg.json"
    cfg = harness.default_config("fig6", sweep={"varpi": [5.0], "bnb_eps_rel": 0.08})
    doc = cfg.to_dict()
    doc["output_dir"] = str(tmp_path)
    cfg_path.write_text(json.dumps(doc))
    code, out, _ = run_cli(capsys, "experiment", "fig6", "--config", str(cfg_path))
    assert code == 0
    paths = out.strip().splitlines()
    assert len(paths) == 2
    names = {os.path.basename(p).split("_")[0] + "_" + os.path.basename(p).split("_")[1]
             for p in paths}
    assert names == {"fig6_open", "fig6_closed"}
    for p in paths:
        lines = open(p).read().splitlines()
        assert lines[1] == "varpi,trace_M,gamma,gap"


def test_oracle_check_exit_code(capsys):
    code, out, _ = run_cli(capsys, "oracle-check", "--seed", "7", "--steps", "25")
    assert code == 0
    assert "max |grid mean - filter mean|" in out


def test_bad_config_file(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = run_cli(capsys, "experiment", "fig7", "--config", str(bad))
    assert code == 2


def test_env_seed_override(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(harness.SEED_ENV_VAR, "1234")
    code, out, _ = run_cli(capsys, "experiment", "fig7", "--out", str(tmp_path),
                           "--paths", "2", "--horizon", "200")
    assert code == 0
    path = out.strip().splitlines()[-1]
    header = json.loads(open(path).read().splitlines()[0][2:])
    assert header["config"]["seed"] == 1234
