"""Consensus ADMM and the two-level (ADMM inside ALM) distributed algorithms.

Heads, duplicated heads, slacks and duals are ``(n_t, n_n)`` arrays.  Stage
subproblems of one sweep are independent and may run on a thread pool; their
results are always gathered in time order and every reduction is taken in a
fixed order, so traces do not depend on the worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
import math
import os
import time
from typing import List, Optional

import numpy as np

from .coupling import coordinate, envelope, node_ranges, range_violation
from .errors import ParameterError
from .hydraulics import Trajectory, feasible_start
from .network import build_bounds
from .nlp import SolverOptions, StageProblem, solve_stage
from .objectives import SccParams, total_objective

WORKERS_ENV = "WDNADMM_WORKERS"
STALL_WINDOW = 50


def default_workers():
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class StandardConfig:
    rho: float = 0.2
    eps_primal: float = 1e-2
    eps_dual: Optional[float] = None
    k_max: int = 500
    first_stage_rho: float = 0.0
    workers: Optional[int] = None

    def __post_init__(self):
        if self.eps_dual is None:
            self.eps_dual = self.eps_primal
        if not (self.rho > 0 and self.eps_primal > 0 and self.eps_dual > 0):
            raise ParameterError("rho and tolerances must be positive")
        if self.k_max < 1:
            raise ParameterError("k_max must be at least 1")
        if self.first_stage_rho < 0:
            raise ParameterError("first_stage_rho must be nonnegative")


@dataclass
class TwoLevelConfig:
    beta1: float = 0.1
    gamma: float = 1.25
    omega: float = 0.75
    beta_cap: float = 1e5
    lambda_lo: float = -1e5
    lambda_hi: float = 1e5
    eps_primal: float = 1e-2
    z_stability_tol: float = 1e-5
    k_max: int = 200
    m_max: int = 200
    workers: Optional[int] = None

    def __post_init__(self):
        if not self.beta1 > 0:
            raise ParameterError("beta1 must be positive")
        if not self.gamma > 1:
            raise ParameterError("gamma must exceed 1")
        if not 0 <= self.omega < 1:
            raise ParameterError("omega must lie in [0, 1)")
        if not self.lambda_lo < self.lambda_hi:
            raise ParameterError("lambda_lo must be below lambda_hi")
        if not (self.eps_primal > 0 and self.z_stability_tol > 0):
            raise ParameterError("tolerances must be positive")
        if self.k_max < 1 or self.m_max < 1:
            raise ParameterError("iteration limits must be at least 1")


@dataclass
class ControlProblem:
    """Network, loading scenario and pressure range tolerance ``delta`` (m, may be inf)."""

    network: object
    scenario: object
    delta: float = math.inf
    scc_params: SccParams = SccParams()
    solver_options: SolverOptions = field(default_factory=SolverOptions)
    flush_outside_scc: bool = False

    def __post_init__(self):
        if not (self.delta > 0 or math.isinf(self.delta)):
            raise ParameterError("delta must be positive or inf")
        self.scenario.check_against(self.network)
        self.bounds = build_bounds(self.network, self.scenario, self.flush_outside_scc)

    @property
    def shape(self):
        return self.scenario.n_t, self.network.n_n

    def start(self):
        return feasible_start(self.network, self.scenario, self.bounds)

    def objective(self, trajectory):
        return total_objective(trajectory, self.scenario, self.network, self.scc_params)


@dataclass
class ConsensusState:
    """Iterate of either algorithm; ``lam`` and ``beta`` are unused by standard ADMM."""

    trajectory: Trajectory
    h_bar: np.ndarray
    z: np.ndarray
    y: np.ndarray
    lam: Optional[np.ndarray]
    rho: float
    beta: float = 0.0
    k: int = 0
    m: int = 0


@dataclass
class IterationRecord:
    iteration: int
    outer: int
    inner: int
    primal_residual: float
    consensus_residual: float
    normalized_residual: float
    dual_residual: float
    objective: float
    z_norm: float
    beta: float
    rho: float
    stage_rho: float
    stage_status: str
    wall_time: float = 0.0


@dataclass
class OuterRecord:
    """State at an outer (ALM) boundary of the two-level method."""

    outer: int
    inner_iterations: int
    beta: float
    rho: float
    restart_identity: float
    z_norm: float
    primal_residual: float
    lambda_min: float
    lambda_max: float
    amplified: bool = False


@dataclass
class IterationTrace:
    records: List[IterationRecord] = field(default_factory=list)
    outer: List[OuterRecord] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    iterates: Optional[list] = None

    columns = ("iteration", "outer", "inner", "primal_residual", "consensus_residual",
               "normalized_residual", "dual_residual", "objective", "z_norm", "beta", "rho",
               "stage_rho", "stage_status")

    def append(self, rec):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def as_rows(self):
        return [asdict(r) for r in self.records]


@dataclass
class AdmmResult:
    trajectory: Trajectory
    h_bar: np.ndarray
    z: np.ndarray
    y: np.ndarray
    lam: Optional[np.ndarray]
    objective: float
    iterations: int
    converged: bool
    max_violation: float
    violating_nodes: int
    trace: IterationTrace
    wall_time: float
    algorithm: str
    state: Optional[ConsensusState] = None

    @property
    def node_ranges(self):
        return node_ranges(self.trajectory.h)

    @property
    def envelope(self):
        return envelope(self.trajectory.h)


# ---------------------------------------------------------------------------
# elementary updates


def z_update(h, h_bar, y, lam, beta, rho):
    """Minimiser of ``<lam, z> + beta/2 |z|^2 + <y, z> + rho/2 |h - h_bar + z|^2``."""
    if not beta + rho > 0:
        raise ParameterError("beta + rho must be positive")
    return -(np.asarray(lam) + np.asarray(y) + rho * (np.asarray(h) - np.asarray(h_bar))) / (beta + rho)


def dual_update_y(y, h, h_bar, z, rho):
    return np.asarray(y) + rho * (np.asarray(h) - np.asarray(h_bar) + np.asarray(z))


def lambda_update(lam, z, beta, lo, hi):
    return np.clip(np.asarray(lam) + beta * np.asarray(z), lo, hi)


def beta_update(beta, z_norm, z_prev_norm, gamma, omega, cap):
    """Amplify ``beta`` by ``gamma`` (up to ``cap``) unless ``|z|`` shrank by ``omega``."""
    if z_norm > omega * z_prev_norm:
        return min(cap, gamma * beta)
    return beta


# ---------------------------------------------------------------------------
# stage sweeps


class _StageSweep:
    """Runs the first-block stage solves, optionally on a thread pool."""

    def __init__(self, problem, workers):
        self.problem = problem
        self.workers = workers or default_workers()
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        self._mult = [None] * problem.scenario.n_t

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def run(self, traj, h_bar, y, rho, z=None):
        p = self.problem
        n_t = p.scenario.n_t

        def one(row):
            prob = StageProblem(p.network, p.scenario, row + 1, h_bar[row], y[row], rho,
                                None if z is None else z[row], p.bounds, p.scc_params,
                                warm_multipliers=self._mult[row])
            return solve_stage(prob, traj[row], p.solver_options)

        if self._pool is None:
            results = [one(r) for r in range(n_t)]
        else:
            results = list(self._pool.map(one, range(n_t)))
        for r, (_, rep) in enumerate(results):
            self._mult[r] = rep.multipliers
        status = "".join(_STATUS_CODE[rep.status] for _, rep in results)
        return Trajectory([st for st, _ in results]), status


_STATUS_CODE = {"converged": "C", "not-converged": "N", "kept-start": "K"}


def _norm(a):
    # fixed-order reduction for reproducibility
    return math.sqrt(math.fsum(float(v) * float(v) for v in np.ravel(a)))


class _StallWatch:
    def __init__(self, trace):
        self.trace = trace
        self.best = math.inf
        self.since = 0
        self.flagged = False

    def update(self, iteration, residual):
        if residual < self.best:
            self.best, self.since, self.flagged = residual, 0, False
            return
        self.since += 1
        if self.since >= STALL_WINDOW and not self.flagged:
            self.trace.notes.append(
                f"primal residual has not improved for {STALL_WINDOW} iterations "
                f"(iteration {iteration}, best {self.best:.4g})")
            self.flagged = True


def _finish(problem, state, trace, converged, t0, algorithm):
    traj = state.trajectory
    viol, count = range_violation(traj.h, problem.delta)
    iterations = state.k if algorithm == "standard" else len(trace)
    return AdmmResult(traj, state.h_bar, state.z, state.y, state.lam, problem.objective(traj),
                      iterations, converged, viol, count, trace, time.perf_counter() - t0,
                      algorithm, state)


# ---------------------------------------------------------------------------
# algorithms


def run_standard(problem, config=None, start=None, keep_iterates=False):
    """Standard consensus ADMM with a fixed penalty.

    Each iteration solves all stage subproblems, projects ``h + y / rho`` onto
    the pressure range set and takes a dual ascent step.  As in the two-level
    method the first stage sweep uses the penalty ``first_stage_rho`` (zero by
    default), so it starts from the uncoupled stage optima.  Stops when
    ``|h - h_bar| <= sqrt(n_n n_t) eps_primal`` and ``|rho (h_bar_new -
    h_bar)| <= eps_dual``; the dual test needs two coordination outputs and is
    skipped on the first iteration, whose ``h_bar`` is the initial copy.
    """
    config = config or StandardConfig()
    t0 = time.perf_counter()
    n_t, n_n = problem.shape
    traj = start.copy() if start is not None else problem.start()
    h_bar = traj.h.copy()
    y = np.zeros((n_t, n_n))
    z0 = np.zeros((n_t, n_n))
    rho = config.rho
    tol_p = math.sqrt(n_n * n_t) * config.eps_primal
    trace = IterationTrace(iterates=[] if keep_iterates else None)
    watch = _StallWatch(trace)
    converged = False
    k = 0
    with _StageSweep(problem, config.workers) as sweep:
        for k in range(1, config.k_max + 1):
            stage_rho = config.first_stage_rho if k == 1 else rho
            traj, status = sweep.run(traj, h_bar, y, stage_rho)
            h = traj.h
            h_bar_new = coordinate(h, z0, y, rho, problem.delta)
            y = dual_update_y(y, h, h_bar_new, z0, rho)
            primal = _norm(h - h_bar_new)
            dual = _norm(rho * (h_bar_new - h_bar))
            h_bar = h_bar_new
            trace.append(IterationRecord(
                k, 0, k, primal, primal, primal / math.sqrt(n_n * n_t), dual,
                problem.objective(traj), 0.0, 0.0, rho, stage_rho, status,
                time.perf_counter() - t0))
            if keep_iterates:
                trace.iterates.append((h.copy(), h_bar.copy(), z0.copy()))
            watch.update(k, primal)
            if primal <= tol_p and (k == 1 or dual <= config.eps_dual):
                converged = True
                break
    state = ConsensusState(traj, h_bar, z0, y, None, rho, k=k)
    return _finish(problem, state, trace, converged, t0, "standard")


def run_two_level(problem, config=None, start=None, keep_iterates=False):
    """Two-level algorithm: three-block ADMM on the slack-relaxed problem inside an ALM loop.

    Outer iteration ``m`` restarts the inner ADMM from the current stage
    solutions with ``h_bar = h``, ``z = 0``, ``y = -lambda`` and penalty
    ``rho = 2 beta``; the very first stage sweep of every restart uses a zero
    consensus penalty.  Inner iterations stop when ``|h - h_bar + z| <=
    sqrt(n_n n_t) / (100 m)`` or ``|rho (z_prev - z)| <= z_stability_tol``.
    The outer loop then updates ``lambda`` (projected onto its box) and
    amplifies ``beta`` when ``|z|`` did not shrink by the factor ``omega``.
    Iterations are counted cumulatively over inner sweeps.
    """
    config = config or TwoLevelConfig()
    t0 = time.perf_counter()
    n_t, n_n = problem.shape
    scale = math.sqrt(n_n * n_t)
    traj = start.copy() if start is not None else problem.start()
    h_bar = traj.h.copy()
    lam = np.zeros((n_t, n_n))
    beta = config.beta1
    z = np.zeros((n_t, n_n))
    y = np.zeros((n_t, n_n))
    z_prev_norm = 0.0  # slack of the initial point
    trace = IterationTrace(iterates=[] if keep_iterates else None)
    watch = _StallWatch(trace)
    converged = False
    total = 0
    with _StageSweep(problem, config.workers) as sweep:
        for m in range(1, config.m_max + 1):
            rho = 2.0 * beta
            h_bar = traj.h.copy()
            z = np.zeros((n_t, n_n))
            y = -lam
            identity = float(np.max(np.abs(lam + beta * z + y), initial=0.0))
            inner_tol = scale / (100.0 * m)
            k_done = 0
            for k in range(config.k_max):
                stage_rho = 0.0 if k == 0 else rho
                traj, status = sweep.run(traj, h_bar, y, stage_rho, z)
                h = traj.h
                h_bar = coordinate(h, z, y, rho, problem.delta)
                z_new = z_update(h, h_bar, y, lam, beta, rho)
                y = dual_update_y(y, h, h_bar, z_new, rho)
                consensus = _norm(h - h_bar + z_new)
                stability = _norm(rho * (z - z_new))
                z = z_new
                total += 1
                k_done = k + 1
                primal = _norm(h - h_bar)
                trace.append(IterationRecord(
                    total, m, k_done, primal, consensus, primal / scale, stability,
                    problem.objective(traj), _norm(z), beta, rho, stage_rho, status,
                    time.perf_counter() - t0))
                if keep_iterates:
                    trace.iterates.append((h.copy(), h_bar.copy(), z.copy()))
                watch.update(total, primal)
                if consensus <= inner_tol or stability <= config.z_stability_tol:
                    break
            primal = _norm(traj.h - h_bar)
            z_norm = _norm(z)
            rec = OuterRecord(m, k_done, beta, rho, identity, z_norm, primal,
                              float(lam.min()), float(lam.max()))
            trace.outer.append(rec)
            if primal <= scale * config.eps_primal:
                converged = True
                break
            lam = lambda_update(lam, z, beta, config.lambda_lo, config.lambda_hi)
            new_beta = beta_update(beta, z_norm, z_prev_norm, config.gamma, config.omega,
                                   config.beta_cap)
            rec.amplified = new_beta > beta
            beta = new_beta
            z_prev_norm = z_norm
    state = ConsensusState(traj, h_bar, z, y, lam, 2.0 * beta, beta, k_done, m)
    return _finish(problem, state, trace, converged, t0, "two-level")
