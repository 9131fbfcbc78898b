"""Water network model: topology, head loss laws, actuator placement and bounds.

Conventions
-----------
* Internal units are SI: flows in m^3/s, heads and lengths in m, areas in m^2.
* Time indices exposed to users are 1-based (``t = 1..n_t``); arrays are
  indexed from zero, so stage ``t`` lives in row ``t - 1``.
* Link orientation runs ``from_node -> to_node``.  The incidence row of a
  link carries -1 at the node it leaves and +1 at the node it enters.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError, StructuralError, ValidationError

GRAVITY = 9.81
HW_EXPONENT = 1.852
VALVE_EXPONENT = 2.0
Q_EPS = 1e-4


@dataclass(frozen=True)
class Link:
    """A pipe or valve between two nodes.

    Pipes use Hazen-Williams friction (``length``, ``hw_coeff``,
    ``diameter``); valves use a local loss (``loss_coeff``, ``diameter``).
    A valve may still carry a nominal ``length`` for weighting purposes.
    """

    from_node: str
    to_node: str
    kind: str = "pipe"
    length: float = 0.0
    diameter: float = 0.1
    hw_coeff: float = 100.0
    loss_coeff: float = 0.0
    name: Optional[str] = None

    @property
    def exponent(self):
        return HW_EXPONENT if self.kind == "pipe" else VALVE_EXPONENT

    @property
    def area(self):
        return np.pi * self.diameter**2 / 4.0


def resistance(link):
    """Resistance coefficient ``r`` so that head loss is ``r |q|^(n-1) q``.

    Pipes: ``10.67 L / (C^1.852 D^4.871)``; valves: ``8 K / (g pi^2 D^4)``.
    """
    if link.kind == "pipe":
        if link.diameter <= 0 or link.hw_coeff <= 0:
            raise ParameterError(f"pipe {link.name!r} needs positive diameter and H-W coefficient")
        if link.length < 0:
            raise ParameterError(f"pipe {link.name!r} has negative length")
        return 10.67 * link.length / (link.hw_coeff**1.852 * link.diameter**4.871)
    if link.kind == "valve":
        if link.diameter <= 0:
            raise ParameterError(f"valve {link.name!r} needs positive diameter")
        if link.loss_coeff < 0:
            raise ParameterError(f"valve {link.name!r} has negative loss coefficient")
        return 8.0 * link.loss_coeff / (GRAVITY * np.pi**2 * link.diameter**4)
    raise ParameterError(f"unknown link kind {link.kind!r}")


def _smoothing_coeffs(r, n, q_eps):
    # odd cubic a*q + b*q^3 matching value and slope of r|q|^(n-1)q at q_eps
    a = 0.5 * (3.0 - n) * r * q_eps ** (n - 1.0)
    b = 0.5 * (n - 1.0) * r * q_eps ** (n - 3.0)
    return a, b


def headloss(q, r, n, q_eps=Q_EPS):
    """Frictional head loss ``r |q|^(n-1) q``, smoothed by a cubic for ``|q| < q_eps``."""
    q = np.asarray(q, dtype=float)
    r = np.broadcast_to(np.asarray(r, dtype=float), q.shape)
    n = np.broadcast_to(np.asarray(n, dtype=float), q.shape)
    aq = np.abs(q)
    out = r * np.power(aq, n - 1.0) * q
    small = aq < q_eps
    if np.any(small):
        a, b = _smoothing_coeffs(r[small], n[small], q_eps)
        qs = q[small]
        out = np.where(small, 0.0, out)
        out[small] = a * qs + b * qs**3
    return out


def headloss_grad(q, r, n, q_eps=Q_EPS):
    """Derivative of :func:`headloss` with respect to ``q``."""
    q = np.asarray(q, dtype=float)
    r = np.broadcast_to(np.asarray(r, dtype=float), q.shape)
    n = np.broadcast_to(np.asarray(n, dtype=float), q.shape)
    aq = np.abs(q)
    out = n * r * np.power(aq, n - 1.0)
    small = aq < q_eps
    if np.any(small):
        a, b = _smoothing_coeffs(r[small], n[small], q_eps)
        out = np.array(out)
        out[small] = a + 3.0 * b * q[small] ** 2
    return out


@dataclass(frozen=True)
class Incidence:
    A12: sp.csr_matrix
    A10: sp.csr_matrix
    A13: sp.csr_matrix
    A14: sp.csr_matrix


@dataclass(frozen=True, eq=False)
class Network:
    """Directed network of junctions, fixed-head sources and links.

    Parameters
    ----------
    junctions, sources : sequence of str
        Node identifiers.  A link endpoint must name one of them.
    elevations : array_like
        Junction elevations (m).
    links : sequence of Link
    pcv_links : sequence of int
        Indices of links carrying a pressure control valve.
    afv_nodes : sequence of int
        Indices of junctions carrying an automatic flushing valve.
    min_pressure : float or array_like
        Minimum pressure head above elevation at every junction (m).
    afv_max_flow : float or array_like
        Flushing capacity of each AFV (m^3/s).
    azp_weights : array_like, optional
        Junction weights for the average zone pressure.  Computed from the
        length of connected links when omitted.
    """

    junctions: Sequence[str]
    sources: Sequence[str]
    elevations: np.ndarray
    links: Sequence[Link]
    pcv_links: Sequence[int] = ()
    afv_nodes: Sequence[int] = ()
    min_pressure: object = 0.0
    afv_max_flow: object = 0.0
    azp_weights: Optional[np.ndarray] = None
    name: str = "network"
    incidence: Incidence = field(init=False, repr=False)

    def __post_init__(self):
        s = object.__setattr__
        s(self, "junctions", tuple(str(j) for j in self.junctions))
        s(self, "sources", tuple(str(j) for j in self.sources))
        s(self, "links", tuple(self.links))
        s(self, "pcv_links", tuple(int(j) for j in self.pcv_links))
        s(self, "afv_nodes", tuple(int(i) for i in self.afv_nodes))
        elev = np.array(self.elevations, dtype=float).reshape(-1)
        s(self, "elevations", elev)
        s(self, "min_pressure", np.broadcast_to(np.asarray(self.min_pressure, float), elev.shape).copy())
        s(self, "afv_max_flow", np.broadcast_to(np.asarray(self.afv_max_flow, float), (len(self.afv_nodes),)).copy())
        self._validate()
        s(self, "incidence", build_incidence(self))
        if self.azp_weights is None:
            s(self, "azp_weights", _length_weights(self))
        else:
            w = np.array(self.azp_weights, dtype=float).reshape(-1)
            if w.shape != elev.shape or np.any(w < 0) or w.sum() <= 0:
                raise ValidationError("must be nonnegative, one per junction, not all zero", "azp_weights")
            s(self, "azp_weights", w / w.sum())
        for arr in ("elevations", "min_pressure", "afv_max_flow", "azp_weights"):
            getattr(self, arr).setflags(write=False)

    def _validate(self):
        if len(set(self.junctions)) != len(self.junctions):
            raise ValidationError("duplicate junction id", "junctions")
        if len(set(self.sources)) != len(self.sources) or set(self.sources) & set(self.junctions):
            raise ValidationError("duplicate or clashing source id", "sources")
        if len(self.sources) == 0:
            raise StructuralError("network has no source node")
        if self.elevations.shape != (len(self.junctions),):
            raise ValidationError("one elevation per junction required", "elevations")
        src = set(self.sources)
        known = src | set(self.junctions)
        for j, link in enumerate(self.links):
            for end in (link.from_node, link.to_node):
                if end not in known:
                    raise StructuralError(f"link {j} references unknown node {end!r}")
            if link.from_node == link.to_node:
                raise StructuralError(f"link {j} is a self loop")
            if link.from_node in src and link.to_node in src:
                raise StructuralError(f"link {j} joins two sources")
            if link.kind not in ("pipe", "valve"):
                raise ValidationError(f"unknown kind {link.kind!r}", f"links[{j}].kind")
            if link.diameter <= 0:
                raise ValidationError("diameter must be positive", f"links[{j}].diameter")
            if link.kind == "pipe" and (link.length <= 0 or link.hw_coeff <= 0):
                raise ValidationError("pipes need positive length and H-W coefficient", f"links[{j}]")
            if link.kind == "valve" and link.loss_coeff < 0:
                raise ValidationError("loss coefficient must be nonnegative", f"links[{j}].loss_coeff")
        for name, idx, size in (("pcv_links", self.pcv_links, len(self.links)),
                                ("afv_nodes", self.afv_nodes, len(self.junctions))):
            if len(set(idx)) != len(idx):
                raise ValidationError("duplicate entry", name)
            if any(i < 0 or i >= size for i in idx):
                raise ValidationError("index out of range", name)
        if np.any(self.afv_max_flow < 0):
            raise ValidationError("must be nonnegative", "afv_max_flow")
        if not np.all(np.isfinite(self.elevations)):
            raise ValidationError("must be finite", "elevations")

    # sizes -------------------------------------------------------------
    @property
    def n_n(self):
        return len(self.junctions)

    @property
    def n_0(self):
        return len(self.sources)

    @property
    def n_p(self):
        return len(self.links)

    @property
    def n_v(self):
        return len(self.pcv_links)

    @property
    def n_f(self):
        return len(self.afv_nodes)

    # per-link arrays ---------------------------------------------------
    @cached_property
    def resistances(self):
        return np.array([resistance(link) for link in self.links])

    @cached_property
    def exponents(self):
        return np.array([link.exponent for link in self.links])

    @cached_property
    def lengths(self):
        return np.array([link.length for link in self.links])

    @cached_property
    def cross_sections(self):
        return np.array([link.area for link in self.links])

    @cached_property
    def scc_weights(self):
        lengths = self.lengths
        total = lengths.sum()
        if total <= 0:
            return np.zeros(self.n_p)
        return lengths / total

    def link_headloss(self, q):
        return headloss(q, self.resistances, self.exponents)

    def link_headloss_grad(self, q):
        return headloss_grad(q, self.resistances, self.exponents)


def _length_weights(network):
    w = np.zeros(network.n_n)
    index = {j: i for i, j in enumerate(network.junctions)}
    for link in network.links:
        for end in (link.from_node, link.to_node):
            if end in index:
                w[index[end]] += link.length
    if w.sum() <= 0:
        w = np.ones(network.n_n)
    return w / w.sum()


def build_incidence(network):
    """Assemble the signed incidence matrices and actuator placement maps."""
    jidx = {j: i for i, j in enumerate(network.junctions)}
    sidx = {s: i for i, s in enumerate(network.sources)}
    n_p = len(network.links)
    a12 = sp.lil_matrix((n_p, len(jidx)))
    a10 = sp.lil_matrix((n_p, len(sidx)))
    for j, link in enumerate(network.links):
        for end, sign in ((link.from_node, -1.0), (link.to_node, 1.0)):
            if end in jidx:
                a12[j, jidx[end]] = sign
            elif end in sidx:
                a10[j, sidx[end]] = sign
            else:
                raise StructuralError(f"link {j} references unknown node {end!r}")
    n_v, n_f = len(network.pcv_links), len(network.afv_nodes)
    a13 = sp.csr_matrix((np.ones(n_v), (list(network.pcv_links), np.arange(n_v))), shape=(n_p, n_v))
    a14 = sp.csr_matrix((np.ones(n_f), (list(network.afv_nodes), np.arange(n_f))), shape=(len(jidx), n_f))
    return Incidence(a12.tocsr(), a10.tocsr(), a13, a14)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Loading conditions over the control horizon.

    ``demands`` is ``(n_t, n_n)`` in m^3/s, ``source_heads`` is ``(n_t, n_0)``
    in m, and ``scc_window`` holds the 1-based time steps in self-cleaning mode.
    """

    demands: np.ndarray
    source_heads: np.ndarray
    scc_window: frozenset = frozenset()
    step_minutes: float = 60.0

    def __post_init__(self):
        d = np.array(self.demands, dtype=float)
        h0 = np.array(self.source_heads, dtype=float)
        if d.ndim == 1:
            d = d[None, :]
        if h0.ndim == 1:
            # one source, one head per time step
            h0 = h0[:, None]
        object.__setattr__(self, "demands", d)
        object.__setattr__(self, "source_heads", h0)
        object.__setattr__(self, "scc_window", frozenset(int(t) for t in self.scc_window))
        if d.shape[0] != h0.shape[0]:
            raise ValidationError("demands and source heads disagree on horizon length", "source_heads")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValidationError("must be finite and nonnegative", "demands")
        if not np.all(np.isfinite(h0)):
            raise ValidationError("must be finite", "source_heads")
        if any(t < 1 or t > d.shape[0] for t in self.scc_window):
            raise ValidationError(f"must lie in 1..{d.shape[0]}", "scc_window")
        if self.step_minutes <= 0:
            raise ValidationError("must be positive", "step_minutes")
        d.setflags(write=False)
        h0.setflags(write=False)

    @property
    def n_t(self):
        return self.demands.shape[0]

    @property
    def scc_mask(self):
        mask = np.zeros(self.n_t, dtype=bool)
        for t in self.scc_window:
            mask[t - 1] = True
        return mask

    def check_against(self, network):
        if self.demands.shape[1] != network.n_n:
            raise ValidationError(f"expected {network.n_n} demand columns, got {self.demands.shape[1]}", "demands")
        if self.source_heads.shape[1] != network.n_0:
            raise ValidationError(f"expected {network.n_0} source head columns", "source_heads")


def default_scc_window(n_t, step_minutes, start="09:30", end="10:30"):
    """Time steps whose interval overlaps the clock window ``[start, end)``.

    A step ``t`` covers ``[(t-1)*step, t*step)`` minutes after midnight.
    """
    def minutes(s):
        hh, mm = s.split(":")
        return 60 * int(hh) + int(mm)

    lo, hi = minutes(start), minutes(end)
    return frozenset(t for t in range(1, n_t + 1)
                     if (t - 1) * step_minutes < hi and t * step_minutes > lo)


@dataclass(frozen=True, eq=False)
class Bounds:
    """Per-stage variable bounds, each array with leading time axis."""

    h_min: np.ndarray
    h_max: np.ndarray
    eta_lo: np.ndarray
    eta_up: np.ndarray
    alpha_max: np.ndarray


def build_bounds(network, scenario, flush_outside_scc=False):
    """Head, valve-loss and flushing bounds for every stage.

    ``h_max`` at stage ``t`` is the largest source head broadcast to all
    junctions; ``h_min`` is elevation plus minimum pressure.  PCV loss
    bounds follow from the head bounds at the valve's end nodes: the
    forward loss cannot exceed ``hmax(from) - hmin(to)`` and the reverse
    loss cannot exceed ``hmax(to) - hmin(from)``.

    Flushing valves only open inside the self-cleaning window unless
    ``flush_outside_scc`` is set; otherwise the pressure objective would use
    them to dump water and lower heads.
    """
    scenario.check_against(network)
    n_t = scenario.n_t
    h0 = scenario.source_heads
    h_max = np.repeat(h0.max(axis=1)[:, None], network.n_n, axis=1)
    h_min = np.repeat((network.elevations + network.min_pressure)[None, :], n_t, axis=0)
    jidx = {j: i for i, j in enumerate(network.junctions)}
    sidx = {s: i for i, s in enumerate(network.sources)}

    def node_bounds(node):
        if node in jidx:
            return h_min[:, jidx[node]], h_max[:, jidx[node]]
        col = h0[:, sidx[node]]
        return col, col

    eta_lo = np.zeros((n_t, network.n_v))
    eta_up = np.zeros((n_t, network.n_v))
    for k, j in enumerate(network.pcv_links):
        link = network.links[j]
        lo_a, hi_a = node_bounds(link.from_node)
        lo_b, hi_b = node_bounds(link.to_node)
        eta_up[:, k] = np.maximum(hi_a - lo_b, 0.0)
        eta_lo[:, k] = -np.maximum(hi_b - lo_a, 0.0)
    alpha_max = np.repeat(network.afv_max_flow[None, :], n_t, axis=0)
    if not flush_outside_scc:
        alpha_max[~scenario.scc_mask] = 0.0
    if np.any(h_min > h_max):
        i = int(np.argwhere(h_min > h_max)[0][1])
        raise ValidationError(f"minimum head exceeds maximum source head at junction {network.junctions[i]!r}", "min_pressure")
    return Bounds(h_min, h_max, eta_lo, eta_up, alpha_max)


def stage_constraint_residual(q, h, eta, alpha, network, scenario, t, bounds=None):
    """Residuals of the stage constraint set at 1-based time step ``t``.

    Returns
    -------
    energy : ndarray (n_p,)
        ``A12 h + A10 h0 + phi(q) + A13 eta``
    mass : ndarray (n_n,)
        ``A12^T q - d - A14 alpha``
    bound_violation : float
        Largest positive exceedance of the head, loss and flushing bounds.
    direction_violation : float
        ``max_j max(0, -q_j (A13 eta)_j)`` over PCV links.
    """
    inc = network.incidence
    row = t - 1
    q, h = np.asarray(q, float), np.asarray(h, float)
    eta, alpha = np.asarray(eta, float), np.asarray(alpha, float)
    h0 = scenario.source_heads[row]
    energy = inc.A12 @ h + inc.A10 @ h0 + network.link_headloss(q) + inc.A13 @ eta
    mass = inc.A12.T @ q - scenario.demands[row] - inc.A14 @ alpha
    if bounds is None:
        bounds = build_bounds(network, scenario)
    viol = [0.0]
    viol.append(np.max(bounds.h_min[row] - h, initial=0.0))
    viol.append(np.max(h - bounds.h_max[row], initial=0.0))
    viol.append(np.max(bounds.eta_lo[row] - eta, initial=0.0))
    viol.append(np.max(eta - bounds.eta_up[row], initial=0.0))
    viol.append(np.max(-alpha, initial=0.0))
    viol.append(np.max(alpha - bounds.alpha_max[row], initial=0.0))
    loss = inc.A13 @ eta
    pcv = list(network.pcv_links)
    direction = float(np.max(np.maximum(0.0, -q[pcv] * loss[pcv]), initial=0.0))
    return np.asarray(energy), np.asarray(mass), float(max(viol)), direction
