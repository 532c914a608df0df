"""Randomised property checks."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mohom.dirichlet import truncate
from mohom.nfunction import ScalarNFunction, conjugate
from mohom.pgrid import BoxGrid, integrate
from mohom.twoscale import unfold

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@given(arrays(float, (7, 2), elements=finite), st.floats(1e-3, 1e3))
def test_vector_truncation_is_idempotent_and_bounded(v, k):
    t = truncate(v, k, vector=True)
    assert np.all(np.sqrt(np.sum(t * t, axis=-1)) <= k * (1 + 1e-12))
    assert np.array_equal(truncate(t, k, vector=True), t)


@settings(max_examples=25, deadline=None)
@given(arrays(float, 65, elements=finite), st.sampled_from([0.5, 0.25, 0.125]))
def test_unfolding_preserves_node_integrals(v, eps):
    g = BoxGrid(1, 64)
    assert abs(unfold(v, eps, g, "nodes").integrate() - integrate(v, g)) <= 1e-9 * (
        1 + np.sum(np.abs(v)) / 64)


@settings(max_examples=25, deadline=None)
@given(st.floats(1.5, 5.0), st.floats(0.1, 4.0), st.floats(0.0, 1.0))
def test_fenchel_young_for_power_conjugates(p, x, frac):
    m = ScalarNFunction.power(p)
    grid = np.linspace(0, 10, 2001)
    smax = 0.9 * float(m.derivative(10.0))
    c = conjugate(m, grid, dual=np.linspace(0, smax, 401))
    s = frac * smax
    assert m(x) + c(s) - x * s >= -1e-9
