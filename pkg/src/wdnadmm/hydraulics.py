"""Steady-state hydraulic solver and feasible starting trajectories."""

import math
import weakref
from dataclasses import dataclass
from typing import List

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InfeasibleToleranceError, NonconvergenceError, StructuralError, ValidationError
from .network import build_bounds, stage_constraint_residual

RESIDUAL_TOL = 1e-8
MAX_NEWTON = 200
MAX_HALVINGS = 40
REGULARIZATION = 1e-12
_DENSE_LIMIT = 400


@dataclass
class StageState:
    """Hydraulic state and controls of a single time step."""

    q: np.ndarray
    h: np.ndarray
    eta: np.ndarray
    alpha: np.ndarray

    def copy(self):
        return StageState(self.q.copy(), self.h.copy(), self.eta.copy(), self.alpha.copy())


@dataclass
class Trajectory:
    stages: List[StageState]

    def __len__(self):
        return len(self.stages)

    def __getitem__(self, k):
        return self.stages[k]

    @property
    def q(self):
        return np.array([s.q for s in self.stages])

    @property
    def h(self):
        return np.array([s.h for s in self.stages])

    @property
    def eta(self):
        return np.array([s.eta for s in self.stages])

    @property
    def alpha(self):
        return np.array([s.alpha for s in self.stages])

    def copy(self):
        return Trajectory([s.copy() for s in self.stages])


_CONNECTED = weakref.WeakSet()


def check_connectivity(network):
    """Raise :class:`StructuralError` naming the first junction with no path to a source."""
    if network in _CONNECTED:
        return
    jidx = {j: i for i, j in enumerate(network.junctions)}
    adj = {n: [] for n in list(network.junctions) + list(network.sources)}
    for link in network.links:
        adj[link.from_node].append(link.to_node)
        adj[link.to_node].append(link.from_node)
    seen = set(network.sources)
    stack = list(network.sources)
    while stack:
        n = stack.pop()
        for m in adj[n]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    for j in network.junctions:
        if j not in seen:
            raise StructuralError(f"junction {j!r} (index {jidx[j]}) is not connected to any source")
    _CONNECTED.add(network)


class JacobianSolver:
    """Factorisation of the hydraulic Jacobian ``[[D, A12], [A12^T, 0]]``.

    The matrix is symmetric, so the same factors serve Newton steps and
    adjoint solves.  A diagonal of ``1e-12`` is added to both blocks when
    the flow-derivative block is near singular (zero-resistance links).
    """

    def __init__(self, network, q):
        A12 = network.incidence.A12
        n_p, n_n = A12.shape
        d = network.link_headloss_grad(q)
        reg = np.min(d, initial=np.inf) < REGULARIZATION
        if reg:
            d = d + REGULARIZATION
        lower = -REGULARIZATION * np.ones(n_n) if reg else np.zeros(n_n)
        self.size = n_p + n_n
        if self.size <= _DENSE_LIMIT:
            a = A12.toarray()
            K = np.zeros((self.size, self.size))
            K[:n_p, :n_p] = np.diag(d)
            K[:n_p, n_p:] = a
            K[n_p:, :n_p] = a.T
            K[n_p:, n_p:] = np.diag(lower)
            with np.errstate(all="raise"):
                try:
                    self._lu = la.lu_factor(K, check_finite=False)
                except (la.LinAlgError, FloatingPointError) as exc:
                    raise NonconvergenceError(f"singular hydraulic Jacobian: {exc}") from exc
            if not np.all(np.isfinite(self._lu[0])) or np.min(np.abs(np.diag(self._lu[0]))) == 0.0:
                raise NonconvergenceError("singular hydraulic Jacobian")
            self._sparse = None
        else:
            K = sp.bmat([[sp.diags(d), A12], [A12.T, sp.diags(lower)]], format="csc")
            try:
                self._sparse = spla.splu(K)
            except RuntimeError as exc:
                raise NonconvergenceError(f"singular hydraulic Jacobian: {exc}") from exc
            self._lu = None

    def solve(self, rhs):
        if self._sparse is not None:
            return self._sparse.solve(rhs)
        return la.lu_solve(self._lu, rhs, check_finite=False)


def _residual(network, q, h, h0, d, eta, alpha):
    inc = network.incidence
    energy = inc.A12 @ h + inc.A10 @ h0 + network.link_headloss(q) + inc.A13 @ eta
    mass = inc.A12.T @ q - d - inc.A14 @ alpha
    return np.concatenate([energy, mass])


def solve_steady(network, demand, source_head, eta=None, alpha=None, start=None,
                 tol=RESIDUAL_TOL, max_iter=MAX_NEWTON):
    """Solve the energy and mass balance equations for fixed controls.

    Damped Newton iteration on the joint ``(q, h)`` system.  Iterates until the
    residual stops decreasing after meeting ``tol`` so the returned state is
    accurate to round-off, not merely to the tolerance.

    Parameters
    ----------
    network : Network
    demand : array_like (n_n,)
        Nodal demands (m^3/s).
    source_head : array_like (n_0,)
        Source heads (m).
    eta, alpha : array_like, optional
        PCV losses (m) and AFV discharges (m^3/s); zero when omitted.
    start : StageState, optional
        Initial iterate.  Defaults to the minimum-norm flow satisfying mass
        balance and the mean source head at every junction.

    Returns
    -------
    StageState

    Raises
    ------
    StructuralError
        A junction has no path to a source.
    NonconvergenceError
        The residual could not be brought below ``tol``.
    """
    check_connectivity(network)
    n_p, n_n = network.n_p, network.n_n
    d = np.asarray(demand, dtype=float).reshape(n_n)
    h0 = np.asarray(source_head, dtype=float).reshape(network.n_0)
    eta = np.zeros(network.n_v) if eta is None else np.asarray(eta, dtype=float).reshape(network.n_v)
    alpha = np.zeros(network.n_f) if alpha is None else np.asarray(alpha, dtype=float).reshape(network.n_f)
    if start is not None:
        try:
            return _newton(network, d, h0, eta, alpha, np.array(start.q, dtype=float),
                           np.array(start.h, dtype=float), tol, max_iter)
        except NonconvergenceError:
            pass  # fall back to the cold start below
    return _newton(network, d, h0, eta, alpha, _balanced_flow(network, d, alpha),
                   np.full(n_n, h0.mean()), tol, max_iter)


def _balanced_flow(network, d, alpha):
    # mass rows are linear, so Newton keeps them satisfied from here on and the
    # merit function only has to track the energy residual
    inc = network.incidence
    rhs = d + inc.A14 @ alpha
    if network.n_p + network.n_n <= _DENSE_LIMIT:
        return np.linalg.lstsq(inc.A12.T.toarray(), rhs, rcond=None)[0]
    return spla.lsqr(inc.A12.T.tocsr(), rhs, atol=1e-14, btol=1e-14)[0]


def _newton(network, d, h0, eta, alpha, q, h, tol, max_iter):
    n_p = network.n_p
    F = _residual(network, q, h, h0, d, eta, alpha)
    merit = F @ F
    converged_once = False
    for _ in range(max_iter):
        if merit == 0.0:
            break
        step = -JacobianSolver(network, q).solve(F)
        lam = 1.0
        improved = False
        for _ in range(MAX_HALVINGS + 1):
            q_new = q + lam * step[:n_p]
            h_new = h + lam * step[n_p:]
            F_new = _residual(network, q_new, h_new, h0, d, eta, alpha)
            merit_new = F_new @ F_new
            if merit_new < merit:
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
        q, h, F, merit = q_new, h_new, F_new, merit_new
        if np.max(np.abs(F)) <= tol:
            if converged_once and np.max(np.abs(F)) <= 1e-3 * tol:
                break
            converged_once = True
    fnorm = float(np.max(np.abs(F), initial=0.0))
    if not fnorm <= tol:
        raise NonconvergenceError(
            f"steady-state solve stalled with residual {fnorm:.3e} (tolerance {tol:.1e})",
            residual=fnorm)
    return StageState(q, h, eta.copy(), alpha.copy())


def feasible_start(network, scenario, bounds=None, check_bounds=True):
    """Uncontrolled hydraulic states (``eta = 0``, ``alpha = 0``) for every stage.

    With no control the heads are as high as the network allows, so if a stage
    breaks its minimum head bound here no control schedule can repair it and a
    :class:`ValidationError` is raised.
    """
    scenario.check_against(network)
    if bounds is None:
        bounds = build_bounds(network, scenario)
    stages = []
    for row in range(scenario.n_t):
        t = row + 1
        try:
            st = solve_steady(network, scenario.demands[row], scenario.source_heads[row])
        except NonconvergenceError as exc:
            raise NonconvergenceError(f"time step {t}: {exc}", residual=exc.residual) from exc
        if check_bounds:
            _, _, bound_viol, _ = stage_constraint_residual(
                st.q, st.h, st.eta, st.alpha, network, scenario, t, bounds)
            if bound_viol > 1e-8:
                i = int(np.argmax(bounds.h_min[row] - st.h))
                raise ValidationError(
                    f"uncontrolled heads violate bounds by {bound_viol:.3g} m at time step {t} "
                    f"(junction {network.junctions[i]!r})", "scenario")
        stages.append(st)
    return Trajectory(stages)


def check_tolerance(network, scenario, delta, tol=1e-6, start=None):
    """Reject a pressure range tolerance the uncontrolled network cannot meet.

    The distributed methods start from the no-control trajectory with
    ``h_bar = h``, which lies in the coupling set only if ``delta`` covers the
    baseline range of every junction.  Returns the baseline ranges; raises
    :class:`InfeasibleToleranceError` naming the junction with the largest
    excess otherwise.
    """
    traj = start if start is not None else feasible_start(network, scenario)
    h = traj.h
    ranges = h.max(axis=0) - h.min(axis=0)
    if math.isinf(delta):
        return ranges
    if not delta > 0:
        raise ValidationError(f"must be positive or inf, got {delta}", "delta")
    excess = ranges - delta
    i = int(np.argmax(excess))
    if excess[i] > tol:
        node = network.junctions[i]
        raise InfeasibleToleranceError(
            f"delta = {delta:g} m is below the uncontrolled pressure range {ranges[i]:.6g} m "
            f"at junction {node!r}", node=node, baseline_range=ranges[i])
    return ranges
