"""Pressure range coupling across time steps and its Euclidean projection.

Heads are arranged as ``(n_t, n_n)`` arrays: one row per time step, one
column per junction.  The coupling set bounds, for every junction, the spread
``max_t h - min_t h`` by ``delta``.
"""

import math

import numpy as np


def _check_delta(delta):
    if not (delta > 0 or math.isinf(delta)):
        raise ValueError(f"pressure range tolerance must be positive or inf, got {delta}")


def node_ranges(h):
    h = np.asarray(h, float)
    return h.max(axis=0) - h.min(axis=0)


def envelope(h):
    """Per-junction ``(c_l, c_u)`` = ``(min_t h, max_t h)``."""
    h = np.asarray(h, float)
    return h.min(axis=0), h.max(axis=0)


def range_violation(h, delta):
    """Largest range excess over ``delta`` and the number of junctions exceeding it."""
    if math.isinf(delta):
        return 0.0, 0
    excess = np.maximum(0.0, node_ranges(h) - delta)
    return float(excess.max(initial=0.0)), int(np.count_nonzero(excess > 0))


def project_node_range(v, delta):
    """Closest point to ``v`` (Euclidean) whose spread is at most ``delta``.

    The solution clamps ``v`` into a window ``[l, l + delta]``.  The squared
    distance is a convex piecewise quadratic in ``l`` with breakpoints at
    ``v_t`` and ``v_t - delta``; we locate the zero of its derivative by
    scanning the sorted breakpoints.
    """
    v = np.asarray(v, dtype=float)
    if math.isinf(delta):
        return v.copy()
    _check_delta(delta)
    lo, hi = v.min(), v.max()
    if hi - lo <= delta:
        return v.copy()
    lower = np.sort(v)
    upper = np.sort(v - delta)
    csum_lo = np.concatenate([[0.0], np.cumsum(lower)])
    csum_up = np.concatenate([[0.0], np.cumsum(upper[::-1])])
    n = len(v)

    # Half the derivative of the distance at window start l is
    #   sum_{v_t < l} (l - v_t) - sum_{v_t - delta > l} (v_t - delta - l),
    # continuous and piecewise linear.  Because the spread exceeds delta, at
    # least one term is active everywhere, so the slope is positive and the
    # root is unique.
    def parts(l):
        nb = int(np.searchsorted(lower, l, side="left"))
        na = n - int(np.searchsorted(upper, l, side="right"))
        return nb, csum_lo[nb], na, csum_up[na]

    def slope(l):
        nb, sb, na, sa = parts(l)
        return nb * l - sb - (sa - na * l)

    breaks = np.unique(np.concatenate([lower, upper]))
    k = 0
    while k < len(breaks) and slope(breaks[k]) < 0:
        k += 1
    if k < len(breaks) and slope(breaks[k]) == 0:
        l_star = breaks[k]
    else:
        a = breaks[k - 1]
        b = breaks[k] if k < len(breaks) else a + 1.0
        nb, sb, na, sa = parts(0.5 * (a + b))
        l_star = min(max((sb + sa) / (nb + na), a), b)
    return np.clip(v, l_star, l_star + delta)


def project_range(x, delta):
    """Project an ``(n_t, n_n)`` head array onto the pressure range set, junction by junction."""
    x = np.asarray(x, dtype=float)
    if math.isinf(delta):
        return x.copy()
    out = np.empty_like(x)
    for i in range(x.shape[1]):
        out[:, i] = project_node_range(x[:, i], delta)
    return out


def coordinate(h, z, y, rho, delta):
    """Coordination update ``Proj(h + z + y / rho)`` of the duplicated heads.

    With ``z = 0`` this is the standard consensus step.
    """
    if not rho > 0:
        raise ValueError("coordination needs a positive penalty")
    return project_range(np.asarray(h) + np.asarray(z) + np.asarray(y) / rho, delta)
