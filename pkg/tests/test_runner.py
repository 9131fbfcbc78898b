import json
import math

import numpy as np
import pytest

from wdnadmm.cli import main
from wdnadmm.errors import ParameterError
from wdnadmm.fileio import load_solution, read_trace, save_network, save_scenario
from wdnadmm.instances import toy_control, toy_scenario
from wdnadmm.objectives import total_objective
from wdnadmm.runner import (EXIT_ERROR, EXIT_NONCONVERGED, EXIT_OK, RunConfig, execute, load_inputs,
                            parse_delta, parse_scc_window, run, sweep, validate)


def _cfg(tmp_path, **kw):
    kw.setdefault("n_t", 3)
    kw.setdefault("workers", 1)
    return RunConfig(output_dir=str(tmp_path), **kw)


def test_parse_helpers():
    assert parse_delta("inf") == math.inf and parse_delta("2.5") == 2.5
    with pytest.raises(ParameterError):
        parse_delta("-1")
    with pytest.raises(ParameterError):
        parse_delta("wide")
    assert parse_scc_window("3,4", 24, 60) == frozenset({3, 4})
    assert parse_scc_window("09:30-10:30", 24, 60) == frozenset({10, 11})
    assert parse_scc_window("", 24, 60) == frozenset()
    with pytest.raises(ParameterError):
        RunConfig(algorithm="magic")


def test_standard_inf_reports_one_iteration(tmp_path):
    outcome = execute(_cfg(tmp_path, algorithm="standard", delta="inf"))
    assert outcome.status == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["iterations"] == 1 and summary["status"] == "converged"
    assert len(read_trace(tmp_path / "trace.csv")) == 1


def test_simulate_has_no_admm_fields(tmp_path):
    assert run(_cfg(tmp_path, algorithm="simulate")) == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert "iterations" not in summary and "max_violation" not in summary
    assert not (tmp_path / "trace.csv").exists()
    traj, _ = load_solution(tmp_path / "solution.json")
    assert np.all(traj.eta == 0) and np.all(traj.alpha == 0)


def test_summary_objective_matches_solution(tmp_path):
    cfg = _cfg(tmp_path, algorithm="two-level", delta=4.0, beta1=1.0)
    assert run(cfg) == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    traj, _ = load_solution(tmp_path / "solution.json")
    net, sc = load_inputs(cfg)
    assert total_objective(traj, sc, net) == pytest.approx(summary["objective"], abs=1e-9)
    assert summary["config"]["delta"] == 4.0


def test_dumped_iterates_match_trace_residual(tmp_path):
    assert run(_cfg(tmp_path, algorithm="standard", delta=4.0, dump_iterates=True)) == EXIT_OK
    rows = read_trace(tmp_path / "trace.csv")
    it = np.load(tmp_path / "iterates.npz")
    k = len(rows) // 2
    scale = math.sqrt(it["h"].shape[1] * it["h"].shape[2])
    expected = np.linalg.norm(it["h"][k] - it["h_bar"][k]) / scale
    assert float(rows[k]["normalized_residual"]) == pytest.approx(expected, rel=1e-12)


def test_nonconvergence_exit_code(tmp_path):
    cfg = _cfg(tmp_path, algorithm="standard", delta=4.0, k_max=2)
    assert run(cfg) == EXIT_NONCONVERGED
    assert json.loads((tmp_path / "summary.json").read_text())["status"] == "not-converged"


def test_error_record(tmp_path):
    outcome = execute(_cfg(tmp_path, algorithm="two-level", delta=0.01))
    assert outcome.status == EXIT_ERROR
    record = json.loads((tmp_path / "error.json").read_text())
    assert record["error"] == "infeasible-delta" and record["node"] == "3"
    outcome = execute(_cfg(tmp_path, network=str(tmp_path / "nope.json")))
    assert outcome.status == EXIT_ERROR and outcome.error["error"] == "parse"


def test_file_inputs(tmp_path):
    net = toy_control()
    save_network(net, tmp_path / "net.json")
    save_scenario(toy_scenario(net, n_t=3), net, tmp_path / "sc.json")
    cfg = _cfg(tmp_path / "out", algorithm="standard", network=str(tmp_path / "net.json"),
               scenario=str(tmp_path / "sc.json"), scc_window="none")
    net2, sc2 = load_inputs(cfg)
    assert sc2.scc_window == frozenset()
    assert run(cfg) == EXIT_OK


def test_sweep_rows(tmp_path):
    cfg = _cfg(tmp_path, algorithm="standard", delta="inf")
    rows = sweep(cfg, [0.1, 1.0])
    rev = sweep(RunConfig(**{**cfg.as_dict(), "output_dir": str(tmp_path / "rev")}), [1.0, 0.1])
    strip = lambda r: {k: v for k, v in r.items() if k != "wall_time"}
    assert [strip(r) for r in rows] == [strip(r) for r in reversed(rev)]
    assert (tmp_path / "sweep.csv").read_text().startswith("beta1,objective,iterations")
    single = sweep(RunConfig(**{**cfg.as_dict(), "output_dir": str(tmp_path / "one")}), [0.1])[0]
    direct = execute(RunConfig(**{**cfg.as_dict(), "output_dir": None, "beta1": 0.1})).summary
    assert single["objective"] == direct["objective"] and single["iterations"] == direct["iterations"]
    bad = sweep(_cfg(tmp_path / "bad", algorithm="standard", delta=0.01), [0.1])
    assert bad[0]["status"].startswith("error")


def test_validate_report(tmp_path):
    rep = validate(_cfg(tmp_path, delta=2.0))
    assert rep["binding_node"] == "3" and rep["max_baseline_range"] < 2.0


def test_cli(tmp_path, capsys):
    assert main(["simulate", "--n-t", "3", "-o", str(tmp_path / "sim")]) == EXIT_OK
    assert main(["validate", "--delta", "0.01"]) == EXIT_ERROR
    err = json.loads(capsys.readouterr().err)
    assert err["node"] == "3"
    assert main(["validate", "--delta", "inf"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["binding_node"] == "3"
    code = main(["solve", "--algorithm", "standard", "--delta", "inf", "--n-t", "3", "--workers", "1",
                 "-o", str(tmp_path / "solve")])
    assert code == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["iterations"] == 1
    assert main(["solve", "--delta", "-2", "-o", str(tmp_path / "x")]) == EXIT_ERROR
    code = main(["sweep", "--algorithm", "two-level", "--delta", "inf", "--n-t", "2",
                 "--beta1-list", "0.1,1", "-o", str(tmp_path / "sw")])
    assert code == EXIT_OK
    assert (tmp_path / "sw" / "sweep.csv").exists()
