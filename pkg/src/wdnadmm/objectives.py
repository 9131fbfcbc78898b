"""Average zone pressure and self-cleaning capacity stage objectives."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class SccParams:
    """Logistic smoothing of the self-cleaning velocity indicator.

    ``threshold_velocity`` (m/s) is the velocity above which sediment is
    mobilised; ``steepness`` sets how sharp the logistic switch is.
    """

    threshold_velocity: float = 0.2
    steepness: float = 50.0

    def __post_init__(self):
        if not (self.threshold_velocity > 0 and self.steepness > 0):
            raise ValueError("threshold_velocity and steepness must be positive")


def azp(h, network):
    """Weighted mean pressure head ``sum_i w_i (h_i - z_i)`` in metres."""
    return float(network.azp_weights @ (np.asarray(h, float) - network.elevations))


def azp_grad(h, network):
    return np.array(network.azp_weights)


def _logistic_pair(v, params):
    k, vt = params.steepness, params.threshold_velocity
    plus = expit(k * (v - vt))
    minus = expit(-k * (v + vt))
    return plus, minus


def scc(q, network, params=SccParams()):
    """Smoothed fraction of network length above the self-cleaning velocity."""
    v = np.asarray(q, float) / network.cross_sections
    plus, minus = _logistic_pair(v, params)
    return float(network.scc_weights @ (plus + minus))


def scc_grad(q, network, params=SccParams()):
    s = network.cross_sections
    v = np.asarray(q, float) / s
    plus, minus = _logistic_pair(v, params)
    k = params.steepness
    dv = k * plus * (1.0 - plus) - k * minus * (1.0 - minus)
    return network.scc_weights * dv / s


class StageObjective:
    """Objective of one time step: ``-scc(q)`` inside the SCC window, ``azp(h)`` outside.

    Calling the object returns the value; :meth:`grad` returns the pair
    ``(df/dq, df/dh)`` with the unused block identically zero.
    """

    def __init__(self, network, in_scc_window, params=SccParams()):
        self.network = network
        self.is_scc = bool(in_scc_window)
        self.params = params

    def __call__(self, q, h):
        if self.is_scc:
            return -scc(q, self.network, self.params)
        return azp(h, self.network)

    def grad(self, q, h):
        net = self.network
        if self.is_scc:
            return -scc_grad(q, net, self.params), np.zeros(net.n_n)
        return np.zeros(net.n_p), azp_grad(h, net)

    def __repr__(self):
        return f"StageObjective({'-SCC' if self.is_scc else 'AZP'})"


def stage_objective(t, scenario, network, params=SccParams()):
    """Objective for 1-based time step ``t`` of ``scenario``."""
    if not 1 <= t <= scenario.n_t:
        raise ValueError(f"time step {t} outside 1..{scenario.n_t}")
    return StageObjective(network, t in scenario.scc_window, params)


def total_objective(trajectory, scenario, network, params=SccParams()):
    """Sum of stage objectives over the horizon, accumulated in time order."""
    total = 0.0
    for row, st in enumerate(trajectory.stages):
        total += stage_objective(row + 1, scenario, network, params)(st.q, st.h)
    return total
