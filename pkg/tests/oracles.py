"""Independent reference computations used by the unit and acceptance tests."""

import itertools

import numpy as np
from scipy.optimize import brentq


def qp_range_projection(x, delta):
    """Brute-force projection of one junction's series onto ``max - min <= delta``.

    Solves ``min ||hb - x||^2`` s.t. ``c_l <= hb_t <= c_u``, ``c_u - c_l <= delta``
    by enumerating every active set: each step is pinned to ``c_l``, pinned to
    ``c_u`` or free, and the range constraint is active or not.  Each
    equality-constrained QP is solved densely from its KKT system; the best
    feasible candidate is the optimum since the QP is convex.
    """
    x = np.asarray(x, float)
    n = len(x)
    best, best_val = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=n):
        for range_active in (False, True):
            # variables: hb (n), then c_l and/or c_u when some constraint uses them
            used = sorted({p for p in pattern if p} | ({1, 2} if range_active else set()))
            col = {p: n + k for k, p in enumerate(used)}
            m = n + len(used)
            rows, rhs = [], []
            for t, p in enumerate(pattern):
                if p:
                    r = np.zeros(m)
                    r[t] = 1.0
                    r[col[p]] = -1.0
                    rows.append(r)
                    rhs.append(0.0)
            if range_active:
                r = np.zeros(m)
                r[col[1]], r[col[2]] = -1.0, 1.0
                rows.append(r)
                rhs.append(delta)
            k = len(rows)
            A = np.array(rows).reshape(k, m)
            K = np.zeros((m + k, m + k))
            K[:n, :n] = 2.0 * np.eye(n)
            K[:m, m:] = A.T
            K[m:, :m] = A
            b = np.concatenate([2.0 * x, np.zeros(m - n), rhs])
            try:
                sol = np.linalg.solve(K, b)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(K, b, rcond=None)[0]
                if not np.allclose(K @ sol, b, atol=1e-9):
                    continue
            hb = sol[:n]
            if hb.max() - hb.min() > delta + 1e-10:
                continue
            val = float(np.sum((hb - x) ** 2))
            if val < best_val - 1e-13:
                best, best_val = hb, val
    return best


def numeric_z_minimizer(h, hb, y, lam, beta, rho, bracket=1e6):
    """Minimise the scalar z-terms of the relaxed augmented Lagrangian numerically.

    ``phi(z) = lam z + beta/2 z^2 + y (h - hb + z) + rho/2 (h - hb + z)^2``; the
    root of a central-difference derivative is located with Brent's method.
    """
    def phi(z):
        r = h - hb + z
        return lam * z + 0.5 * beta * z * z + y * r + 0.5 * rho * r * r

    def dphi(z, e=1.0):
        return (phi(z + e) - phi(z - e)) / (2.0 * e)

    return brentq(dphi, -bracket, bracket, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
