import json

import numpy as np
import pytest

from wdnadmm.errors import ParseError, UnitError, ValidationError
from wdnadmm.fileio import (load_network, load_scenario, load_solution, network_to_dict,
                            read_demand_table, read_trace, save_network, save_scenario,
                            solution_to_dict, write_json, write_trace)
from wdnadmm.admm import IterationRecord, IterationTrace
from wdnadmm.hydraulics import feasible_start
from wdnadmm.instances import toy_control, toy_scenario

MINIMAL = {
    "name": "two-node",
    "units": {"diameter": "mm", "flow": "L/s"},
    "min_pressure": 10,
    "sources": ["R"],
    "junctions": [{"id": "A", "elevation": 3.0}],
    "links": [{"id": "p", "from": "R", "to": "A", "length": 50, "diameter": 150, "hw_coeff": 120}],
    "afvs": [{"node": "A", "max_flow": 25}],
}


def _write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_units_converted(tmp_path):
    net = load_network(_write(tmp_path, "n.json", MINIMAL))
    assert net.afv_max_flow[0] == pytest.approx(0.025)
    assert net.links[0].diameter == pytest.approx(0.15)
    assert net.min_pressure[0] == 10.0


def test_network_round_trip(tmp_path):
    net = load_network(_write(tmp_path, "n.json", MINIMAL))
    save_network(net, tmp_path / "again.json")
    again = load_network(tmp_path / "again.json")
    assert network_to_dict(again) == network_to_dict(net)
    assert again.links == net.links
    for attr in ("elevations", "min_pressure", "afv_max_flow", "azp_weights"):
        np.testing.assert_array_equal(getattr(again, attr), getattr(net, attr))


def test_toy_round_trip(tmp_path):
    net = toy_control()
    sc = toy_scenario(net)
    save_network(net, tmp_path / "n.json")
    save_scenario(sc, net, tmp_path / "s.json")
    net2 = load_network(tmp_path / "n.json")
    sc2 = load_scenario(tmp_path / "s.json", net2)
    np.testing.assert_array_equal(sc2.demands, sc.demands)
    np.testing.assert_array_equal(sc2.source_heads, sc.source_heads)
    assert sc2.scc_window == sc.scc_window
    assert net2.pcv_links == net.pcv_links and net2.afv_nodes == net.afv_nodes


def test_duplicate_afv(tmp_path):
    doc = dict(MINIMAL, afvs=[{"node": "A", "max_flow": 1}, {"node": "A", "max_flow": 2}])
    with pytest.raises(ValidationError, match="afv_nodes"):
        load_network(_write(tmp_path, "n.json", doc))


def test_error_classes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "sources": ["R"],\n  "junctions": [\n')
    with pytest.raises(ParseError, match="line"):
        load_network(bad)
    with pytest.raises(ParseError):
        load_network(tmp_path / "missing.json")
    with pytest.raises(UnitError):
        load_network(_write(tmp_path, "u.json", dict(MINIMAL, units={"flow": "gallons"})))
    doc = dict(MINIMAL, links=[{"from": "R", "to": "A", "length": 50, "diameter": "wide"}])
    with pytest.raises(ValidationError, match=r"links\[0\].diameter"):
        load_network(_write(tmp_path, "v.json", doc))
    assert ParseError.kind != UnitError.kind != ValidationError.kind


def test_scenario_forms(tmp_path):
    net = toy_control()
    (tmp_path / "d.csv").write_text("time,3,1,2\n0,1.0,2.0,3.0\n60,1.5,2.5,3.5\n")
    doc = {"units": {"flow": "L/s"}, "demands_csv": "d.csv", "source_heads": 48,
           "scc_window": {"start": "00:30", "end": "01:30"}}
    sc = load_scenario(_write(tmp_path, "s.json", doc), net)
    np.testing.assert_allclose(sc.demands, [[2e-3, 3e-3, 1e-3], [2.5e-3, 3.5e-3, 1.5e-3]])
    np.testing.assert_array_equal(sc.source_heads, 48.0)
    assert sc.scc_window == frozenset({1, 2})
    ids, data = read_demand_table(tmp_path / "d.csv")
    assert ids == ["3", "1", "2"] and data.shape == (2, 3)
    with pytest.raises(ValidationError):
        load_scenario(_write(tmp_path, "s2.json", {"demands": {"1": [1.0]}, "source_heads": 40}), net)
    (tmp_path / "bad.csv").write_text("1,2,3\n1,2\n")
    with pytest.raises(ParseError, match="line 2"):
        read_demand_table(tmp_path / "bad.csv")


def test_solution_round_trip(tmp_path):
    net = toy_control()
    sc = toy_scenario(net)
    traj = feasible_start(net, sc)
    doc = solution_to_dict(traj, net, {"objective": 1.0})
    assert np.allclose(np.array(doc["c_u"]) - np.array(doc["c_l"]), doc["pressure_range"])
    write_json(doc, tmp_path / "sol.json")
    back, raw = load_solution(tmp_path / "sol.json")
    np.testing.assert_array_equal(back.h, traj.h)
    np.testing.assert_array_equal(back.alpha, traj.alpha)
    assert raw["objective"] == 1.0


def test_trace_file(tmp_path):
    trace = IterationTrace()
    trace.append(IterationRecord(1, 0, 1, 0.1, 0.1, 0.05, 0.2, np.float64(3.5), 0.0, 0.0, 1.0, 0.0,
                                 "CC", wall_time=12.3))
    write_trace(trace, tmp_path / "t.csv")
    text = (tmp_path / "t.csv").read_text()
    assert "wall" not in text and "12.3" not in text
    rows = read_trace(tmp_path / "t.csv")
    assert rows[0]["objective"] == "3.5" and rows[0]["stage_status"] == "CC"
    assert list(rows[0]) == list(IterationTrace.columns)
