"""Network, scenario, solution and trace files.

Networks and scenarios are JSON documents.  Each may carry a ``units`` block;
values are converted to SI on load and always written back in SI.

Network document::

    {
      "name": "toy",
      "units": {"length": "m", "diameter": "mm", "flow": "L/s"},
      "min_pressure": 15,
      "sources": ["S"],
      "junctions": [{"id": "1", "elevation": 10.0, "min_pressure": 15}, ...],
      "links": [{"id": "v1", "from": "S", "to": "1", "kind": "valve",
                 "diameter": 200, "loss_coeff": 1.0, "pcv": true},
                {"id": "p1", "from": "1", "to": "2", "length": 300,
                 "diameter": 100, "hw_coeff": 100}, ...],
      "afvs": [{"node": "3", "max_flow": 25}],
      "azp_weights": {"1": 0.5, ...}            (optional)
    }

Scenario document::

    {
      "units": {"flow": "L/s"},
      "step_minutes": 60,
      "demands": {"1": [1.2, 1.5, ...], ...}   or   "demands_csv": "demands.csv",
      "source_heads": {"S": [50, 50, ...]}      or a single number,
      "scc_window": [3]                          or {"start": "09:30", "end": "10:30"}
    }

A demand table has a header row of junction ids, optionally preceded by a
``time`` column, and one row per time step.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .coupling import envelope, node_ranges
from .errors import ParseError, UnitError, ValidationError
from .network import Link, Network, Scenario, default_scc_window

UNITS = {
    "length": {"m": 1.0, "km": 1000.0, "ft": 0.3048},
    "diameter": {"m": 1.0, "mm": 1e-3, "cm": 1e-2, "in": 0.0254},
    "flow": {"m3/s": 1.0, "L/s": 1e-3, "l/s": 1e-3, "m3/h": 1.0 / 3600.0},
    "head": {"m": 1.0, "ft": 0.3048},
}
SI = {"length": "m", "diameter": "m", "flow": "m3/s", "head": "m"}


def _factors(doc, where):
    units = doc.get("units", {})
    if not isinstance(units, dict):
        raise UnitError(f"{where}: 'units' must be an object")
    out = {}
    for quantity, table in UNITS.items():
        name = units.get(quantity, SI[quantity])
        if name not in table:
            raise UnitError(f"{where}: unknown {quantity} unit {name!r} (expected one of {sorted(table)})")
        out[quantity] = table[name]
    unknown = set(units) - set(UNITS)
    if unknown:
        raise UnitError(f"{where}: unknown unit quantity {sorted(unknown)}")
    return out


def _read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return doc


def _number(value, field):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"expected a number, got {value!r}", field)
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError("must be finite", field)
    return value


def _require(obj, key, field):
    if key not in obj:
        raise ValidationError("missing required field", f"{field}.{key}" if field else key)
    return obj[key]


# ---------------------------------------------------------------------------
# networks


def network_from_dict(doc, where="network"):
    f = _factors(doc, where)
    default_pmin = _number(doc.get("min_pressure", 0.0), "min_pressure") * f["head"]
    junctions, elevations, pmin = [], [], []
    for i, j in enumerate(_require(doc, "junctions", "")):
        fld = f"junctions[{i}]"
        if not isinstance(j, dict):
            raise ValidationError("expected an object", fld)
        junctions.append(str(_require(j, "id", fld)))
        elevations.append(_number(j.get("elevation", 0.0), f"{fld}.elevation") * f["head"])
        pmin.append(_number(j["min_pressure"], f"{fld}.min_pressure") * f["head"]
                    if "min_pressure" in j else default_pmin)
    sources = [str(s) for s in _require(doc, "sources", "")]
    links, pcv = [], []
    for k, ln in enumerate(_require(doc, "links", "")):
        fld = f"links[{k}]"
        if not isinstance(ln, dict):
            raise ValidationError("expected an object", fld)
        kind = ln.get("kind", "pipe")
        links.append(Link(
            str(_require(ln, "from", fld)), str(_require(ln, "to", fld)), kind,
            length=_number(ln.get("length", 0.0), f"{fld}.length") * f["length"],
            diameter=_number(_require(ln, "diameter", fld), f"{fld}.diameter") * f["diameter"],
            hw_coeff=_number(ln.get("hw_coeff", 100.0), f"{fld}.hw_coeff"),
            loss_coeff=_number(ln.get("loss_coeff", 0.0), f"{fld}.loss_coeff"),
            name=str(ln["id"]) if "id" in ln else None))
        if ln.get("pcv", False):
            pcv.append(k)
    index = {j: i for i, j in enumerate(junctions)}
    afv_nodes, afv_max = [], []
    for a, afv in enumerate(doc.get("afvs", [])):
        fld = f"afvs[{a}]"
        node = str(_require(afv, "node", fld))
        if node not in index:
            raise ValidationError(f"unknown junction {node!r}", f"{fld}.node")
        afv_nodes.append(index[node])
        afv_max.append(_number(_require(afv, "max_flow", fld), f"{fld}.max_flow") * f["flow"])
    weights = doc.get("azp_weights")
    if weights is not None:
        if not isinstance(weights, dict) or set(weights) != set(junctions):
            raise ValidationError("must map every junction id to a weight", "azp_weights")
        weights = [_number(weights[j], f"azp_weights.{j}") for j in junctions]
    return Network(junctions, sources, elevations, links, pcv_links=pcv, afv_nodes=afv_nodes,
                   min_pressure=pmin, afv_max_flow=afv_max, azp_weights=weights,
                   name=str(doc.get("name", "network")))


def network_to_dict(network):
    """SI representation accepted by :func:`network_from_dict`."""
    pcv = set(network.pcv_links)
    links = []
    for k, ln in enumerate(network.links):
        rec = {"id": ln.name if ln.name is not None else f"L{k + 1}", "from": ln.from_node,
               "to": ln.to_node, "kind": ln.kind, "diameter": ln.diameter}
        if ln.kind == "pipe":
            rec.update(length=ln.length, hw_coeff=ln.hw_coeff)
        else:
            rec.update(loss_coeff=ln.loss_coeff)
            if ln.length:
                rec["length"] = ln.length
        if k in pcv:
            rec["pcv"] = True
        links.append(rec)
    return {
        "name": network.name,
        "units": dict(SI),
        "sources": list(network.sources),
        "junctions": [{"id": j, "elevation": float(e), "min_pressure": float(p)}
                      for j, e, p in zip(network.junctions, network.elevations, network.min_pressure)],
        "links": links,
        "afvs": [{"node": network.junctions[i], "max_flow": float(m)}
                 for i, m in zip(network.afv_nodes, network.afv_max_flow)],
        "azp_weights": {j: float(w) for j, w in zip(network.junctions, network.azp_weights)},
    }


def load_network(path):
    return network_from_dict(_read_json(path), str(path))


def save_network(network, path):
    Path(path).write_text(json.dumps(network_to_dict(network), indent=2) + "\n")


# ---------------------------------------------------------------------------
# scenarios


def read_demand_table(path, junctions=None):
    """Read an ``(n_t, n_n)`` demand table; columns reordered to ``junctions`` if given.

    Values are returned as written (no unit conversion).
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise ParseError(f"{path}: need a header row and at least one data row")
    header = [c.strip() for c in rows[0]]
    skip = 1 if header[0].lower() in ("time", "t", "step") else 0
    ids = header[skip:]
    data = []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(r)}")
        try:
            data.append([float(c) for c in r[skip:]])
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    data = np.array(data)
    if junctions is not None:
        if sorted(ids) != sorted(junctions):
            raise ValidationError(f"{path}: header must list exactly the network junctions", "demands")
        data = data[:, [ids.index(j) for j in junctions]]
        ids = list(junctions)
    return ids, data


def _series(value, n_t, field):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return None if n_t is None else np.full(n_t, _number(value, field))
    if not isinstance(value, list):
        raise ValidationError("expected a number or a list of numbers", field)
    return np.array([_number(v, f"{field}[{i}]") for i, v in enumerate(value)])


def scenario_from_dict(doc, network=None, base_dir=".", where="scenario"):
    f = _factors(doc, where)
    step = _number(doc.get("step_minutes", 60.0), "step_minutes")
    if "demands_csv" in doc:
        ids, demands = read_demand_table(Path(base_dir) / doc["demands_csv"],
                                         network.junctions if network is not None else None)
    else:
        table = _require(doc, "demands", "")
        if not isinstance(table, dict):
            raise ValidationError("must map junction ids to series", "demands")
        ids = list(network.junctions) if network is not None else list(table)
        missing = set(ids) ^ set(table)
        if missing:
            raise ValidationError(f"junction ids do not match the network: {sorted(missing)}", "demands")
        cols = [_series(table[j], None, f"demands.{j}") for j in ids]
        if any(c is None for c in cols):
            raise ValidationError("each junction needs a list of values", "demands")
        if len({len(c) for c in cols}) != 1:
            raise ValidationError("all series must have the same length", "demands")
        demands = np.column_stack(cols)
    demands = demands * f["flow"]
    n_t = demands.shape[0]
    heads = _require(doc, "source_heads", "")
    if isinstance(heads, dict):
        srcs = list(network.sources) if network is not None else list(heads)
        if set(srcs) != set(heads):
            raise ValidationError("source ids do not match the network", "source_heads")
        h0 = np.column_stack([_series(heads[s], n_t, f"source_heads.{s}") for s in srcs])
    else:
        n_0 = network.n_0 if network is not None else 1
        h0 = np.tile(_series(heads, n_t, "source_heads")[:, None], (1, n_0))
    if h0.shape[0] != n_t:
        raise ValidationError(f"expected {n_t} values per source", "source_heads")
    h0 = h0 * f["head"]
    window = doc.get("scc_window", [])
    if isinstance(window, dict):
        window = default_scc_window(n_t, step, str(_require(window, "start", "scc_window")),
                                    str(_require(window, "end", "scc_window")))
    elif isinstance(window, list):
        window = [int(_number(t, f"scc_window[{i}]")) for i, t in enumerate(window)]
    else:
        raise ValidationError("expected a list of time steps or {start, end}", "scc_window")
    sc = Scenario(demands, h0, frozenset(window), step)
    if network is not None:
        sc.check_against(network)
    return sc


def scenario_to_dict(scenario, network):
    return {
        "units": dict(SI),
        "step_minutes": scenario.step_minutes,
        "demands": {j: scenario.demands[:, i].tolist() for i, j in enumerate(network.junctions)},
        "source_heads": {s: scenario.source_heads[:, i].tolist() for i, s in enumerate(network.sources)},
        "scc_window": sorted(scenario.scc_window),
    }


def load_scenario(path, network=None):
    """Load a scenario; with ``network`` given, columns follow its junction order."""
    path = Path(path)
    return scenario_from_dict(_read_json(path), network, path.parent, str(path))


def save_scenario(scenario, network, path):
    Path(path).write_text(json.dumps(scenario_to_dict(scenario, network), indent=2) + "\n")


# ---------------------------------------------------------------------------
# outputs


def solution_to_dict(trajectory, network, extra=None):
    """Full trajectory plus per-junction pressure range and ``(c_l, c_u)`` envelope."""
    h = trajectory.h
    c_l, c_u = envelope(h)
    doc = {
        "junctions": list(network.junctions),
        "links": [ln.name if ln.name is not None else f"L{k + 1}" for k, ln in enumerate(network.links)],
        "pcv_links": [int(k) for k in network.pcv_links],
        "afv_nodes": [network.junctions[i] for i in network.afv_nodes],
        "q": trajectory.q.tolist(),
        "h": h.tolist(),
        "eta": trajectory.eta.tolist(),
        "alpha": trajectory.alpha.tolist(),
        "pressure_range": node_ranges(h).tolist(),
        "c_l": c_l.tolist(),
        "c_u": c_u.tolist(),
    }
    if extra:
        doc.update(extra)
    return doc


def load_solution(path):
    """Read a solution file back into a :class:`Trajectory`."""
    from .hydraulics import StageState, Trajectory

    doc = _read_json(path)
    arrays = [np.array(doc[k], dtype=float) for k in ("q", "h", "eta", "alpha")]
    n_t = arrays[1].shape[0]
    arrays = [a.reshape(n_t, -1) for a in arrays]
    stages = [StageState(*(a[t] for a in arrays)) for t in range(n_t)]
    return Trajectory(stages), doc


def write_json(doc, path):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_trace(trace, path):
    """One CSV row per iteration, fixed column order; wall time is not written."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace.columns)
        for rec in trace.as_rows():
            w.writerow([_fmt(rec[c]) for c in trace.columns])


def read_trace(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
