"""Local NLP solver for the per-stage consensus subproblem and the coupled reference.

Both problems are solved in the space of control variables.  For fixed PCV
losses and AFV discharges the hydraulic equations have a unique solution
(:func:`~wdnadmm.hydraulics.solve_steady`), so flows and heads are implicit
functions of the controls and the energy/mass equalities hold to round-off at
every iterate.  The remaining inequalities (head bounds, PCV direction and,
for the coupled problem, the pressure range envelope) are handled by an
augmented Lagrangian outer loop; each inner problem is a box-constrained
smooth minimisation solved with L-BFGS-B, with gradients obtained from one
adjoint solve of the hydraulic Jacobian.
"""

from dataclasses import dataclass, field
import math
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .errors import ParameterError
from .hydraulics import JacobianSolver, StageState, Trajectory, solve_steady
from .network import build_bounds, stage_constraint_residual
from .objectives import SccParams, stage_objective

ALPHA_SCALE = 1e-3  # flushing rates are optimised in L/s


@dataclass
class SolverOptions:
    stationarity_tol: float = 1e-6
    feasibility_tol: float = 1e-6
    bound_tol: float = 1e-8
    max_inner: int = 500
    max_outer: int = 30
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e8
    progress_ratio: float = 0.25
    inner_tol_init: float = 1e-2
    inner_tol_factor: float = 0.2


@dataclass
class KktReport:
    stationarity_norm: float
    feasibility_norm: float
    complementarity_norm: float
    iterations: int
    converged: bool
    outer_iterations: int = 0
    multipliers: Optional[np.ndarray] = field(default=None, repr=False)
    penalty: float = 0.0
    kept_start: bool = False

    @property
    def status(self):
        if self.kept_start:
            return "kept-start"
        return "converged" if self.converged else "not-converged"


@dataclass
class StageProblem:
    """Stage subproblem at 1-based time step ``t``.

    Minimises ``f_t(q, h) + <y, h - h_bar + z> + rho/2 ||h - h_bar + z||^2``
    over the stage constraint set.  With ``z = 0`` this is the standard
    consensus subproblem.
    """

    network: object
    scenario: object
    t: int
    h_bar: np.ndarray
    y: np.ndarray
    rho: float
    z: Optional[np.ndarray] = None
    bounds: object = None
    scc_params: SccParams = SccParams()
    warm_multipliers: Optional[np.ndarray] = None
    warm_penalty: Optional[float] = None

    def __post_init__(self):
        n_n = self.network.n_n
        self.h_bar = np.asarray(self.h_bar, float).reshape(n_n)
        self.y = np.asarray(self.y, float).reshape(n_n)
        self.z = np.zeros(n_n) if self.z is None else np.asarray(self.z, float).reshape(n_n)
        if self.rho < 0:
            raise ParameterError("penalty rho must be nonnegative")
        if self.bounds is None:
            self.bounds = build_bounds(self.network, self.scenario)
        self.objective = stage_objective(self.t, self.scenario, self.network, self.scc_params)


def stage_lagrangian(q, h, prob):
    """Stage augmented Lagrangian value (controls enter only through the constraints)."""
    r = np.asarray(h, float) - prob.h_bar + prob.z
    return prob.objective(q, h) + float(prob.y @ r) + 0.5 * prob.rho * float(r @ r)


def stage_lagrangian_grad(q, h, prob):
    """Gradient of :func:`stage_lagrangian` with respect to ``(q, h)``."""
    gq, gh = prob.objective.grad(q, h)
    r = np.asarray(h, float) - prob.h_bar + prob.z
    return gq, gh + prob.y + prob.rho * r


# ---------------------------------------------------------------------------
# implicit stage map


class _StageMap:
    """Controls -> hydraulic state for one time step, with adjoint pullback."""

    def __init__(self, network, demand, source_head, start):
        self.network = network
        self.demand = demand
        self.source_head = source_head
        self._last = start
        inc = network.incidence
        self._A13T = inc.A13.T.tocsr()
        self._A14T = inc.A14.T.tocsr()

    def state(self, eta, alpha):
        st = solve_steady(self.network, self.demand, self.source_head, eta, alpha,
                          start=self._last)
        self._last = st
        return st

    def pullback(self, st, gq, gh):
        """Total derivative of a function of ``(q, h)`` with respect to ``(eta, alpha)``."""
        n_p = self.network.n_p
        mu = JacobianSolver(self.network, st.q).solve(np.concatenate([gq, gh]))
        return -(self._A13T @ mu[:n_p]), self._A14T @ mu[n_p:]


def _stage_constraints(st, h_min, h_max, pcv):
    # order: h_min - h, h - h_max, -q_j * eta_k for PCVs
    return np.concatenate([h_min - st.h, st.h - h_max, -st.q[pcv] * st.eta])


def _stage_constraint_pullback(st, w, n_n, n_p, pcv):
    """Partial derivatives of ``w . g`` with respect to ``(q, h, eta)``."""
    gh = -w[:n_n] + w[n_n:2 * n_n]
    wd = w[2 * n_n:]
    gq = np.zeros(n_p)
    np.add.at(gq, pcv, -wd * st.eta)
    geta = -wd * st.q[pcv]
    return gq, gh, geta


# ---------------------------------------------------------------------------
# augmented Lagrangian engine


def _projected_gradient(x, g, lo, hi):
    return x - np.clip(x - g, lo, hi)


def _alm(problem, x0, lo, hi, n_con, opts, lam0=None, mu0=None):
    """Minimise ``problem.objective`` subject to ``g(x) <= 0`` and ``lo <= x <= hi``.

    ``problem.merit(x, lam, mu)`` must return ``(value, gradient, g)`` of the
    augmented Lagrangian ``J + 1/(2 mu) sum(max(0, lam + mu g)^2 - lam^2)``.
    """
    lam = np.zeros(n_con) if lam0 is None or len(lam0) != n_con else np.array(lam0, float)
    mu = opts.penalty_init if mu0 is None else float(mu0)
    x = np.clip(np.array(x0, float), lo, hi)
    box = list(zip(lo, hi))
    omega = opts.inner_tol_init
    _, _, g = problem.merit(x, lam, mu)
    if x.size == 0:
        # no controls: the hydraulics fix the point, only report on it
        viol = max(0.0, float(np.max(g, initial=0.0)))
        return x, KktReport(0.0, viol, 0.0, 0, viol <= opts.bound_tol, 0, lam, mu)
    prev_v = np.max(np.abs(np.maximum(g, -lam / mu)), initial=0.0)
    total_inner = 0
    report = None
    for outer in range(1, opts.max_outer + 1):
        res = minimize(problem.merit_fg, x, args=(lam, mu), jac=True, method="L-BFGS-B",
                       bounds=box,
                       options={"maxiter": opts.max_inner, "gtol": omega, "ftol": 1e-16,
                                "maxcor": 20, "maxls": 40})
        x = np.clip(res.x, lo, hi)
        total_inner += int(res.get("nit", 0))
        _, grad, g = problem.merit(x, lam, mu)
        stat = np.max(np.abs(_projected_gradient(x, grad, lo, hi)), initial=0.0)
        lam = np.maximum(0.0, lam + mu * g)
        v = np.max(np.abs(np.maximum(g, -lam / mu)), initial=0.0)
        viol = max(0.0, float(np.max(g, initial=0.0)))
        comp = float(np.max(np.abs(lam * g), initial=0.0))
        report = KktReport(stat, viol, comp, total_inner, False, outer, lam.copy(), mu)
        if viol <= opts.bound_tol and stat <= opts.stationarity_tol and comp <= opts.stationarity_tol:
            report.converged = True
            break
        if v > opts.progress_ratio * prev_v and viol > opts.bound_tol:
            mu = min(mu * opts.penalty_growth, opts.penalty_max)
        prev_v = v
        omega = max(omega * opts.inner_tol_factor, 0.1 * opts.stationarity_tol)
    return x, report


class _StageReduced:
    """The stage subproblem written over scaled controls ``(eta, alpha / 1e-3)``."""

    def __init__(self, prob, start):
        net = prob.network
        row = prob.t - 1
        self.prob = prob
        self.net = net
        self.n_v, self.n_f = net.n_v, net.n_f
        self.pcv = np.array(net.pcv_links, dtype=int)
        self.h_min = prob.bounds.h_min[row]
        self.h_max = prob.bounds.h_max[row]
        self.map = _StageMap(net, prob.scenario.demands[row], prob.scenario.source_heads[row], start)
        self.lo = np.concatenate([prob.bounds.eta_lo[row], np.zeros(self.n_f)])
        self.hi = np.concatenate([prob.bounds.eta_up[row], prob.bounds.alpha_max[row] / ALPHA_SCALE])
        if np.any(self.lo > self.hi):
            raise ParameterError(f"empty control bounds at time step {prob.t}")
        self.n_con = 2 * net.n_n + self.n_v

    def unpack(self, x):
        return x[:self.n_v], x[self.n_v:] * ALPHA_SCALE

    def pack(self, eta, alpha):
        return np.concatenate([eta, np.asarray(alpha) / ALPHA_SCALE])

    def merit(self, x, lam, mu):
        eta, alpha = self.unpack(x)
        st = self.map.state(eta, alpha)
        val = stage_lagrangian(st.q, st.h, self.prob)
        gq, gh = stage_lagrangian_grad(st.q, st.h, self.prob)
        g = _stage_constraints(st, self.h_min, self.h_max, self.pcv)
        w = np.maximum(0.0, lam + mu * g)
        val += (w @ w - lam @ lam) / (2.0 * mu)
        cq, ch, ceta = _stage_constraint_pullback(st, w, self.net.n_n, self.net.n_p, self.pcv)
        d_eta, d_alpha = self.map.pullback(st, gq + cq, gh + ch)
        grad = np.concatenate([d_eta + ceta, d_alpha * ALPHA_SCALE])
        return val, grad, g

    def merit_fg(self, x, lam, mu):
        val, grad, _ = self.merit(x, lam, mu)
        return val, grad


def solve_stage(prob, start, opts=None):
    """Locally solve the stage subproblem from a feasible warm start.

    Returns the new stage state and a :class:`KktReport`.  When the local
    solve ends at a higher augmented Lagrangian value than the warm start
    (which is feasible), the warm start is returned instead so that the
    descent property the consensus algorithms rely on always holds.
    """
    opts = opts or SolverOptions()
    red = _StageReduced(prob, start)
    x0 = red.pack(start.eta, start.alpha)
    x, report = _alm(red, x0, red.lo, red.hi, red.n_con, opts,
                     prob.warm_multipliers, prob.warm_penalty)
    eta, alpha = red.unpack(x)
    st = solve_steady(prob.network, prob.scenario.demands[prob.t - 1],
                      prob.scenario.source_heads[prob.t - 1], eta, alpha, start=start)
    energy, mass, bviol, dviol = stage_constraint_residual(
        st.q, st.h, st.eta, st.alpha, prob.network, prob.scenario, prob.t, prob.bounds)
    report.feasibility_norm = max(float(np.max(np.abs(energy), initial=0.0)),
                                  float(np.max(np.abs(mass), initial=0.0)), bviol, dviol)
    if stage_lagrangian(st.q, st.h, prob) > stage_lagrangian(start.q, start.h, prob) + 1e-10:
        report.kept_start = True
        return start.copy(), report
    return st, report


# ---------------------------------------------------------------------------
# coupled reference problem


class _CoupledReduced:
    """All stages plus the range envelope ``c_l <= h_t <= c_u``, ``c_u - c_l <= delta``."""

    def __init__(self, network, scenario, bounds, delta, start, params):
        self.net = network
        self.scenario = scenario
        self.delta = delta
        self.coupled = not math.isinf(delta)
        self.n_t = scenario.n_t
        self.n_v, self.n_f = network.n_v, network.n_f
        self.n_u = self.n_v + self.n_f
        self.pcv = np.array(network.pcv_links, dtype=int)
        self.bounds = bounds
        self.objs = [stage_objective(t, scenario, network, params) for t in range(1, self.n_t + 1)]
        self.maps = [_StageMap(network, scenario.demands[r], scenario.source_heads[r], start[r])
                     for r in range(self.n_t)]
        lo, hi = [], []
        for r in range(self.n_t):
            lo.append(np.concatenate([bounds.eta_lo[r], np.zeros(self.n_f)]))
            hi.append(np.concatenate([bounds.eta_up[r], bounds.alpha_max[r] / ALPHA_SCALE]))
        n_n = network.n_n
        if self.coupled:
            hlo, hhi = bounds.h_min.min(axis=0), bounds.h_max.max(axis=0)
            lo += [hlo, hlo]
            hi += [hhi, hhi]
        self.lo, self.hi = np.concatenate(lo), np.concatenate(hi)
        self.n_stage_con = 2 * n_n + self.n_v
        self.n_con = self.n_t * self.n_stage_con + (2 * self.n_t * n_n + n_n if self.coupled else 0)

    def pack(self, traj):
        parts = [np.concatenate([s.eta, s.alpha / ALPHA_SCALE]) for s in traj.stages]
        if self.coupled:
            h = traj.h
            parts += [h.min(axis=0), h.max(axis=0)]
        return np.concatenate(parts)

    def controls(self, x, r):
        u = x[r * self.n_u:(r + 1) * self.n_u]
        return u[:self.n_v], u[self.n_v:] * ALPHA_SCALE

    def states(self, x):
        return [self.maps[r].state(*self.controls(x, r)) for r in range(self.n_t)]

    def objective(self, x):
        return sum(f(st.q, st.h) for f, st in zip(self.objs, self.states(x)))

    def merit(self, x, lam, mu):
        net, n_n, n_t = self.net, self.net.n_n, self.n_t
        states = self.states(x)
        gs = [_stage_constraints(st, self.bounds.h_min[r], self.bounds.h_max[r], self.pcv)
              for r, st in enumerate(states)]
        H = np.array([st.h for st in states])
        if self.coupled:
            off = n_t * self.n_u
            cl, cu = x[off:off + n_n], x[off + n_n:off + 2 * n_n]
            gs.append((H - cu).ravel())
            gs.append((cl - H).ravel())
            gs.append(cu - cl - self.delta)
        g = np.concatenate(gs)
        w = np.maximum(0.0, lam + mu * g)
        val = (w @ w - lam @ lam) / (2.0 * mu)
        grad = np.zeros_like(x)
        m = self.n_stage_con
        if self.coupled:
            base = n_t * m
            w_cu = w[base:base + n_t * n_n].reshape(n_t, n_n)
            w_cl = w[base + n_t * n_n:base + 2 * n_t * n_n].reshape(n_t, n_n)
            w_rng = w[base + 2 * n_t * n_n:]
            grad[off:off + n_n] = w_cl.sum(axis=0) - w_rng
            grad[off + n_n:off + 2 * n_n] = -w_cu.sum(axis=0) + w_rng
        for r, st in enumerate(states):
            f = self.objs[r]
            val += f(st.q, st.h)
            gq, gh = f.grad(st.q, st.h)
            cq, ch, ceta = _stage_constraint_pullback(st, w[r * m:(r + 1) * m], n_n, net.n_p, self.pcv)
            gh = gh + ch
            if self.coupled:
                gh = gh + w_cu[r] - w_cl[r]
            d_eta, d_alpha = self.maps[r].pullback(st, gq + cq, gh)
            grad[r * self.n_u:(r + 1) * self.n_u] = np.concatenate([d_eta + ceta, d_alpha * ALPHA_SCALE])
        return val, grad, g

    def merit_fg(self, x, lam, mu):
        val, grad, _ = self.merit(x, lam, mu)
        return val, grad


@dataclass
class CoupledResult:
    trajectory: Trajectory
    objective: float
    report: KktReport


def solve_coupled(network, scenario, delta, start=None, scc_params=SccParams(), opts=None):
    """Solve the full time-coupled control problem as one NLP.

    The pressure range constraint enters through per-junction envelope
    variables ``c_l``/``c_u``.  Used as the centralized reference for the
    distributed algorithms; practical only for small instances.
    """
    from .hydraulics import feasible_start

    opts = opts or SolverOptions(max_outer=60)
    bounds = build_bounds(network, scenario)
    if start is None:
        start = feasible_start(network, scenario, bounds)
    red = _CoupledReduced(network, scenario, bounds, delta, start, scc_params)
    x, report = _alm(red, red.pack(start), red.lo, red.hi, red.n_con, opts)
    stages = []
    for r in range(scenario.n_t):
        eta, alpha = red.controls(x, r)
        stages.append(solve_steady(network, scenario.demands[r], scenario.source_heads[r],
                                   eta, alpha, start=start[r]))
    traj = Trajectory(stages)
    return CoupledResult(traj, red.objective(x), report)
