import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize_scalar

from oracles import qp_range_projection
from wdnadmm.coupling import (coordinate, envelope, node_ranges, project_node_range, project_range,
                              range_violation)

series = arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50))
deltas = st.floats(0.01, 30)


def test_range_violation_examples():
    h = np.array([[0.0, 1.0], [25.0, 1.0]])
    assert range_violation(h, 20.0) == (5.0, 1)
    assert range_violation(np.ones((4, 3)), 0.1) == (0.0, 0)
    assert range_violation(h, math.inf) == (0.0, 0)
    np.testing.assert_array_equal(node_ranges(h), [25.0, 0.0])
    lo, hi = envelope(h)
    np.testing.assert_array_equal(lo, [0.0, 1.0])
    np.testing.assert_array_equal(hi, [25.0, 1.0])


def test_projection_examples():
    np.testing.assert_allclose(project_node_range([0.0, 10.0], 4.0), [3.0, 7.0])
    v = np.array([1.0, 2.0, 1.5])
    np.testing.assert_array_equal(project_node_range(v, 1.0), v)
    with pytest.raises(ValueError):
        project_node_range(v, -1.0)


def test_projection_against_scalar_search(rng):
    for _ in range(300):
        v = rng.normal(0, 5, rng.integers(2, 9))
        delta = rng.uniform(0.1, 8)
        p = project_node_range(v, delta)
        res = minimize_scalar(lambda l: np.sum((np.clip(v, l, l + delta) - v) ** 2),
                              bounds=(v.min() - delta, v.max()), method="bounded",
                              options={"xatol": 1e-12})
        ref = np.clip(v, res.x, res.x + delta)
        assert np.sum((p - v) ** 2) <= np.sum((ref - v) ** 2) + 1e-9


def test_projection_against_qp_oracle(rng):
    for _ in range(40):
        v = rng.normal(0, 3, rng.integers(1, 6))
        delta = rng.choice([0.5, 2.0, 10.0])
        np.testing.assert_allclose(project_node_range(v, delta), qp_range_projection(v, delta), atol=1e-8)


@settings(max_examples=200, deadline=None)
@given(series, deltas)
def test_projection_properties(v, delta):
    p = project_node_range(v, delta)
    assert p.max() - p.min() <= delta * (1 + 1e-12) + 1e-9
    # idempotent, and the optimality condition of a projection onto a convex set
    np.testing.assert_allclose(project_node_range(p, delta), p, atol=1e-9)
    w = project_node_range(v + np.linspace(-1, 1, len(v)) * delta, delta)
    assert (v - p) @ (w - p) <= 1e-7 * (1 + np.abs(v).max() ** 2)


@settings(max_examples=100, deadline=None)
@given(series, deltas, st.floats(-100, 100))
def test_projection_translation_invariant(v, delta, c):
    np.testing.assert_allclose(project_node_range(v + c, delta), project_node_range(v, delta) + c,
                               atol=1e-9)


def test_project_range_columns(rng):
    x = rng.normal(0, 4, (5, 3))
    p = project_range(x, 2.0)
    for i in range(3):
        np.testing.assert_allclose(p[:, i], project_node_range(x[:, i], 2.0))
    np.testing.assert_array_equal(project_range(x, math.inf), x)


def test_coordinate(rng):
    h = np.tile(rng.normal(40, 1, 3), (4, 1))
    zero = np.zeros_like(h)
    np.testing.assert_array_equal(coordinate(h, zero, zero, 1.0, 1.0), h)
    z, y = rng.normal(size=h.shape), rng.normal(size=h.shape)
    np.testing.assert_allclose(coordinate(h, z, y, 2.0, math.inf), h + z + y / 2.0, rtol=0, atol=0)
    with pytest.raises(ValueError):
        coordinate(h, z, y, 0.0, 1.0)
