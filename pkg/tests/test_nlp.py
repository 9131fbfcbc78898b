import math

import numpy as np
import pytest

from wdnadmm.coupling import node_ranges
from wdnadmm.errors import ParameterError
from wdnadmm.hydraulics import feasible_start, solve_steady
from wdnadmm.instances import pcv_line, toy_control, toy_scenario
from wdnadmm.network import Bounds, Scenario, build_bounds, stage_constraint_residual
from wdnadmm.nlp import (SolverOptions, StageProblem, _StageReduced, solve_coupled, solve_stage,
                         stage_lagrangian, stage_lagrangian_grad)


@pytest.fixture(scope="module")
def toy_start():
    net = toy_control()
    sc = toy_scenario(net)
    return net, sc, feasible_start(net, sc)


def test_lagrangian_trivial_cases(toy_start):
    net, sc, start = toy_start
    st = start[0]
    prob = StageProblem(net, sc, 1, st.h, np.zeros(3), 3.0)
    assert stage_lagrangian(st.q, st.h, prob) == prob.objective(st.q, st.h)
    hb = st.h + np.array([1.0, -2.0, 0.5])
    prob = StageProblem(net, sc, 1, hb, np.zeros(3), 3.0)
    value = stage_lagrangian(st.q, st.h, prob) - prob.objective(st.q, st.h)
    assert value == pytest.approx(1.5 * (1 + 4 + 0.25))


def test_lagrangian_matches_straight_line_evaluation(toy_start, rng):
    net, sc, _ = toy_start
    for t in (1, 3):
        for _ in range(20):
            q, h = rng.normal(0, 0.01, net.n_p), rng.normal(40, 3, 3)
            hb, y, z = rng.normal(40, 3, 3), rng.normal(size=3), rng.normal(size=3)
            rho = rng.uniform(0, 5)
            prob = StageProblem(net, sc, t, hb, y, rho, z)
            expected = prob.objective(q, h)
            for i in range(3):
                r = h[i] - hb[i] + z[i]
                expected += y[i] * r + 0.5 * rho * r * r
            assert stage_lagrangian(q, h, prob) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_lagrangian_gradient_finite_difference(toy_start, rng):
    net, sc, _ = toy_start
    s = net.cross_sections
    for t in (1, 3):
        for _ in range(10):
            q = rng.choice([-1, 1], net.n_p) * rng.uniform(0.1, 0.3, net.n_p) * s
            h = rng.normal(40, 3, 3)
            prob = StageProblem(net, sc, t, rng.normal(40, 3, 3), rng.normal(size=3),
                                rng.uniform(0.1, 5), rng.normal(size=3))
            gq, gh = stage_lagrangian_grad(q, h, prob)
            g = np.concatenate([gq, gh])
            x = np.concatenate([q, h])
            steps = np.concatenate([1e-7 * s, np.full(3, 1e-5)])
            fd = np.empty_like(x)
            for k in range(len(x)):
                e = np.zeros_like(x)
                e[k] = steps[k]
                fp = stage_lagrangian((x + e)[:net.n_p], (x + e)[net.n_p:], prob)
                fm = stage_lagrangian((x - e)[:net.n_p], (x - e)[net.n_p:], prob)
                fd[k] = (fp - fm) / (2 * steps[k])
            assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)


def test_reduced_gradient_matches_finite_difference(toy_start, rng):
    """The adjoint pullback through the hydraulic solve agrees with differencing the solve."""
    net, sc, start = toy_start
    for t in (2, 3):
        prob = StageProblem(net, sc, t, start[t - 1].h - 1.0, rng.normal(size=3), 0.7)
        red = _StageReduced(prob, start[t - 1])
        lam = rng.uniform(0, 1, red.n_con)
        x = np.array([3.0, 2.0 if t == 3 else 0.0])
        _, grad, _ = red.merit(x, lam, 10.0)
        for k in range(len(x)):
            if t != 3 and k == 1:
                continue
            e = np.zeros_like(x)
            e[k] = 1e-5
            fd = (red.merit(x + e, lam, 10.0)[0] - red.merit(x - e, lam, 10.0)[0]) / 2e-5
            assert grad[k] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_no_control_freedom_returns_start(toy_start):
    net, sc, start = toy_start
    b = build_bounds(net, sc)
    frozen = Bounds(b.h_min, b.h_max, np.zeros_like(b.eta_lo), np.zeros_like(b.eta_up),
                    np.zeros_like(b.alpha_max))
    for t in range(1, sc.n_t + 1):
        prob = StageProblem(net, sc, t, np.zeros(3), np.zeros(3), 0.0, bounds=frozen)
        st, rep = solve_stage(prob, start[t - 1])
        np.testing.assert_allclose(st.h, start[t - 1].h, atol=1e-10)
        np.testing.assert_allclose(st.eta, 0.0)
        assert rep.converged


def test_stage_solution_quality(toy_start):
    net, sc, start = toy_start
    for t in range(1, sc.n_t + 1):
        prob = StageProblem(net, sc, t, start[t - 1].h, np.zeros(3), 0.0)
        st, rep = solve_stage(prob, start[t - 1])
        assert rep.converged, rep
        assert rep.feasibility_norm <= 1e-6 and rep.stationarity_norm <= 1e-6
        energy, mass, bviol, dviol = stage_constraint_residual(st.q, st.h, st.eta, st.alpha, net, sc, t)
        assert max(np.abs(energy).max(), np.abs(mass).max()) <= 1e-6
        assert bviol <= 1e-8 and dviol <= 1e-8
        assert stage_lagrangian(st.q, st.h, prob) <= stage_lagrangian(start[t - 1].q, start[t - 1].h, prob) + 1e-10
        if t in sc.scc_window:
            assert st.alpha[0] > 0
        else:
            # pressure management pushes the critical junction down to its minimum head
            assert np.min(st.h - prob.bounds.h_min[t - 1]) == pytest.approx(0.0, abs=1e-6)


def test_penalty_keeps_unpenalised_optimum(toy_start):
    net, sc, start = toy_start
    for t in (1, 3):
        st0, _ = solve_stage(StageProblem(net, sc, t, np.zeros(3), np.zeros(3), 0.0), start[t - 1])
        for rho in (0.5, 10.0):
            st1, rep = solve_stage(StageProblem(net, sc, t, st0.h, np.zeros(3), rho), st0)
            np.testing.assert_allclose(st1.h, st0.h, atol=1e-5)


def test_single_pcv_matches_grid_search():
    net = pcv_line()
    sc = Scenario(np.array([[0.002, 0.003]]), np.array([[50.0]]))
    start = feasible_start(net, sc)
    st, rep = solve_stage(StageProblem(net, sc, 1, np.zeros(2), np.zeros(2), 0.0), start[0])
    assert rep.converged
    h_min = build_bounds(net, sc).h_min[0]
    # AZP falls as the valve closes, so the optimum is the largest feasible loss
    def largest_feasible(grid):
        ok = [eta for eta in grid
              if np.all(solve_steady(net, sc.demands[0], [50.0], eta=[eta]).h >= h_min - 1e-12)]
        return max(ok)

    coarse = largest_feasible(np.linspace(0.0, 40.0, 401))
    fine = largest_feasible(np.linspace(coarse, coarse + 0.1, 1001))
    best = solve_steady(net, sc.demands[0], [50.0], eta=[fine])
    np.testing.assert_allclose(st.h, best.h, atol=1e-3)
    assert np.min(st.h - h_min) == pytest.approx(0.0, abs=1e-6)


def test_negative_rho_rejected(toy_start):
    net, sc, _ = toy_start
    with pytest.raises(ParameterError):
        StageProblem(net, sc, 1, np.zeros(3), np.zeros(3), -1.0)


def test_coupled_reference(toy_start):
    net, sc, start = toy_start
    free = solve_coupled(net, sc, math.inf, start=start)
    stagewise = 0.0
    for t in range(1, sc.n_t + 1):
        st, _ = solve_stage(StageProblem(net, sc, t, np.zeros(3), np.zeros(3), 0.0), start[t - 1])
        stagewise += StageProblem(net, sc, t, np.zeros(3), np.zeros(3), 0.0).objective(st.q, st.h)
    assert free.objective == pytest.approx(stagewise, rel=1e-6)
    tight = solve_coupled(net, sc, 5.0, start=start)
    assert tight.report.converged
    assert np.max(node_ranges(tight.trajectory.h)) <= 5.0 + 1e-6
    assert tight.objective > free.objective


def test_options_defaults():
    o = SolverOptions()
    assert (o.stationarity_tol, o.feasibility_tol, o.max_inner, o.max_outer) == (1e-6, 1e-6, 500, 30)
