"""Run configuration and orchestration: simulate, solve, sweep, validate.

Inputs are either file paths or built-in instances named ``builtin:<name>``
(networks ``toy-control``, ``triangle``, ``grid``, ``chain``; scenarios
``toy`` and ``random``, the latter drawn from ``seed``).  Every run writes its
artifacts to ``output_dir``:

``solution.json``  full trajectory, per-junction range and envelope
``trace.csv``      one row per iteration (solvers only)
``summary.json``   objective, iterations, violation, wall time, status
``error.json``     machine-readable error record (failed runs only)
"""

import csv
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import instances
from .admm import (ControlProblem, StandardConfig, TwoLevelConfig, default_workers,
                   run_standard, run_two_level)
from .coupling import range_violation
from .errors import ParameterError, ValidationError, WdnError
from .fileio import (load_network, load_scenario, solution_to_dict, write_json, write_trace)
from .hydraulics import check_tolerance, feasible_start
from .network import Scenario, default_scc_window
from .nlp import solve_coupled
from .objectives import SccParams

ALGORITHMS = ("standard", "two-level", "simulate", "centralized-reference")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NONCONVERGED = 2

_NETWORKS = {
    "toy-control": instances.toy_control,
    "triangle": instances.triangle_loop,
    "grid": instances.grid,
    "chain": instances.series_chain,
}


@dataclass
class RunConfig:
    """Everything needed to reproduce one run.

    ``rho`` is the standard ADMM penalty; when omitted it is ``2 * beta1`` so
    both algorithms are tuned by the same number.
    """

    algorithm: str = "two-level"
    network: str = "builtin:toy-control"
    scenario: str = "builtin:toy"
    delta: float = math.inf
    beta1: float = 0.1
    rho: Optional[float] = None
    gamma: float = 1.25
    omega: float = 0.75
    beta_cap: float = 1e5
    lambda_bound: float = 1e5
    eps_primal: float = 1e-2
    eps_dual: Optional[float] = None
    z_stability_tol: float = 1e-5
    k_max: int = 500
    inner_k_max: int = 200
    m_max: int = 200
    scc_window: Optional[str] = None
    threshold_velocity: float = 0.2
    steepness: float = 50.0
    n_t: int = 4
    seed: int = 0
    workers: Optional[int] = None
    precheck: bool = True
    dump_iterates: bool = False
    output_dir: Optional[str] = "out"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ParameterError(f"algorithm must be one of {', '.join(ALGORITHMS)}")
        self.delta = parse_delta(self.delta)
        for name in ("beta1", "gamma", "omega", "eps_primal"):
            if not getattr(self, name) >= 0 or (name != "omega" and getattr(self, name) == 0):
                raise ParameterError(f"{name} must be positive")
        if self.rho is not None and not self.rho > 0:
            raise ParameterError("rho must be positive")
        if self.workers is not None and self.workers < 1:
            raise ParameterError("workers must be at least 1")

    @property
    def effective_rho(self):
        return self.rho if self.rho is not None else 2.0 * self.beta1

    def standard_config(self):
        return StandardConfig(rho=self.effective_rho, eps_primal=self.eps_primal,
                              eps_dual=self.eps_dual, k_max=self.k_max,
                              workers=self.workers or default_workers())

    def two_level_config(self):
        return TwoLevelConfig(beta1=self.beta1, gamma=self.gamma, omega=self.omega,
                              beta_cap=self.beta_cap, lambda_lo=-self.lambda_bound,
                              lambda_hi=self.lambda_bound, eps_primal=self.eps_primal,
                              z_stability_tol=self.z_stability_tol, k_max=self.inner_k_max,
                              m_max=self.m_max, workers=self.workers or default_workers())

    def as_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["delta"] = "inf" if math.isinf(self.delta) else self.delta
        return out


def parse_delta(value):
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("inf", "+inf", "infinity", "none"):
            return math.inf
        try:
            value = float(v)
        except ValueError:
            raise ParameterError(f"delta must be a number or 'inf', got {value!r}") from None
    value = float(value)
    if not (value > 0 or math.isinf(value)):
        raise ParameterError(f"delta must be positive or inf, got {value}")
    return value


def parse_scc_window(text, n_t, step_minutes):
    """``"09:30-10:30"`` (clock window) or ``"3,4"`` (1-based steps); empty means none."""
    text = text.strip()
    if not text or text.lower() == "none":
        return frozenset()
    if ":" in text:
        try:
            start, end = text.split("-")
        except ValueError:
            raise ParameterError(f"clock window must look like 09:30-10:30, got {text!r}") from None
        return default_scc_window(n_t, step_minutes, start.strip(), end.strip())
    try:
        return frozenset(int(t) for t in text.split(","))
    except ValueError:
        raise ParameterError(f"bad SCC window {text!r}") from None


def load_inputs(config):
    """Network and scenario for ``config``, with any SCC window override applied."""
    if config.network.startswith("builtin:"):
        key = config.network.split(":", 1)[1]
        if key not in _NETWORKS:
            raise ValidationError(f"unknown built-in network {key!r}", "network")
        net = _NETWORKS[key]()
    else:
        net = load_network(config.network)
    if config.scenario.startswith("builtin:"):
        key = config.scenario.split(":", 1)[1]
        if key == "toy":
            sc = instances.toy_scenario(net, n_t=config.n_t)
        elif key == "random":
            rng = np.random.default_rng(config.seed)
            sc = instances.random_scenario(net, config.n_t, rng)
        else:
            raise ValidationError(f"unknown built-in scenario {key!r}", "scenario")
    else:
        sc = load_scenario(config.scenario, net)
    if config.scc_window is not None:
        sc = Scenario(sc.demands, sc.source_heads,
                      parse_scc_window(config.scc_window, sc.n_t, sc.step_minutes), sc.step_minutes)
    return net, sc


def _scc_params(config):
    return SccParams(config.threshold_velocity, config.steepness)


@dataclass
class RunOutcome:
    status: int
    summary: dict
    result: object = None
    error: Optional[dict] = None
    files: dict = field(default_factory=dict)


def _solve(config, net, sc, out):
    """Run the configured algorithm; returns ``(summary, result, trajectory, trace)``."""
    params = _scc_params(config)
    t0 = time.perf_counter()
    summary = {"algorithm": config.algorithm, "network": net.name,
               "junctions": net.n_n, "time_steps": sc.n_t}
    if config.algorithm == "simulate":
        traj = feasible_start(net, sc, check_bounds=False)
        from .objectives import total_objective
        summary.update(objective=total_objective(traj, sc, net, params), converged=True,
                       wall_time=time.perf_counter() - t0)
        return summary, traj, traj, None
    summary["delta"] = "inf" if math.isinf(config.delta) else config.delta
    start = feasible_start(net, sc)
    if config.precheck:
        check_tolerance(net, sc, config.delta, start=start)
    if config.algorithm == "centralized-reference":
        res = solve_coupled(net, sc, config.delta, start=start, scc_params=params)
        viol, count = range_violation(res.trajectory.h, config.delta)
        summary.update(objective=res.objective, converged=bool(res.report.converged),
                       iterations=res.report.outer_iterations, max_violation=viol,
                       violating_nodes=count, wall_time=time.perf_counter() - t0)
        return summary, res, res.trajectory, None
    problem = ControlProblem(net, sc, config.delta, params)
    if config.algorithm == "standard":
        res = run_standard(problem, config.standard_config(), start, config.dump_iterates)
        summary["rho"] = config.effective_rho
    else:
        res = run_two_level(problem, config.two_level_config(), start, config.dump_iterates)
        summary["beta1"] = config.beta1
        summary["outer_iterations"] = len(res.trace.outer)
        summary["final_beta"] = res.trace.outer[-1].beta if res.trace.outer else config.beta1
    summary.update(objective=res.objective, converged=bool(res.converged),
                   iterations=res.iterations, max_violation=res.max_violation,
                   violating_nodes=res.violating_nodes, wall_time=res.wall_time,
                   notes=list(res.trace.notes))
    return summary, res, res.trajectory, res.trace


def execute(config):
    """Run ``config`` and write its artifacts; never raises for package errors."""
    out = Path(config.output_dir) if config.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    files = {}
    try:
        net, sc = load_inputs(config)
        summary, result, traj, trace = _solve(config, net, sc, out)
    except WdnError as exc:
        record = exc.as_record()
        if out is not None:
            write_json(record, out / "error.json")
            files["error"] = str(out / "error.json")
        return RunOutcome(EXIT_ERROR, {"algorithm": config.algorithm, "status": "error"}, None, record, files)
    status = EXIT_OK if summary["converged"] else EXIT_NONCONVERGED
    summary["status"] = "converged" if status == EXIT_OK else "not-converged"
    if out is not None:
        sol = solution_to_dict(traj, net, {"objective": summary["objective"]})
        write_json(sol, out / "solution.json")
        files["solution"] = str(out / "solution.json")
        if trace is not None:
            write_trace(trace, out / "trace.csv")
            files["trace"] = str(out / "trace.csv")
            if trace.iterates is not None:
                h, hb, z = (np.array([it[i] for it in trace.iterates]) for i in range(3))
                np.savez(out / "iterates.npz", h=h, h_bar=hb, z=z)
                files["iterates"] = str(out / "iterates.npz")
        write_json({**summary, "config": config.as_dict()}, out / "summary.json")
        files["summary"] = str(out / "summary.json")
    return RunOutcome(status, summary, result, None, files)


def run(config):
    """Exit status of :func:`execute`: 0 converged, 2 not converged, 1 error."""
    return execute(config).status


SWEEP_COLUMNS = ("beta1", "objective", "iterations", "max_violation", "wall_time", "status")


def sweep(config, beta1_list):
    """Run ``config`` once per ``beta1`` (standard ADMM uses ``rho = 2 beta1``).

    Each row is an independent run from the same starting point, so rows do
    not depend on the order of ``beta1_list``.  Failed runs are recorded and
    the sweep continues.  Writes ``sweep.csv`` and per-run subdirectories when
    ``output_dir`` is set.
    """
    if config.algorithm not in ("standard", "two-level"):
        raise ParameterError("sweep needs algorithm 'standard' or 'two-level'")
    rows = []
    base = Path(config.output_dir) if config.output_dir else None
    for beta in beta1_list:
        sub = str(base / f"beta1_{beta:g}") if base is not None else None
        cfg = replace(config, beta1=float(beta), rho=None, output_dir=sub)
        outcome = execute(cfg)
        s = outcome.summary
        if outcome.status == EXIT_ERROR:
            row = {"beta1": float(beta), "objective": None, "iterations": None,
                   "max_violation": None, "wall_time": None,
                   "status": f"error: {outcome.error['message']}"}
        else:
            row = {"beta1": float(beta), **{k: s[k] for k in SWEEP_COLUMNS[1:-1]},
                   "status": s["status"]}
        rows.append(row)
    if base is not None:
        base.mkdir(parents=True, exist_ok=True)
        with (base / "sweep.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return rows


def validate(config):
    """Load inputs and check that the uncontrolled network admits ``delta``.

    Returns a report with the baseline per-junction ranges; raises on any
    failure (parse, units, invariants, infeasible tolerance).
    """
    net, sc = load_inputs(config)
    start = feasible_start(net, sc)
    ranges = check_tolerance(net, sc, config.delta, start=start)
    i = int(np.argmax(ranges))
    return {"network": net.name, "junctions": net.n_n, "links": net.n_p, "time_steps": sc.n_t,
            "delta": "inf" if math.isinf(config.delta) else config.delta,
            "baseline_ranges": dict(zip(net.junctions, ranges.tolist())),
            "binding_node": net.junctions[i], "max_baseline_range": float(ranges[i])}
