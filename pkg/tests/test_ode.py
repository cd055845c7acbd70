import math

import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rfent.ode import STATUS_EXITED, STATUS_OK, chebyshev_lobatto, clenshaw_curtis_weights, integrate


def harmonic(s, y):
    return jnp.array([y[1], -y[0]])


def test_harmonic_oscillator_matches_closed_form():
    s_out = jnp.linspace(0.0, 10.0, 11)
    ys, status, _ = integrate(harmonic, jnp.array([0.0, 1.0]), s_out, rtol=1e-11, atol=1e-11)
    assert int(status) == STATUS_OK
    np.testing.assert_allclose(np.asarray(ys)[:, 0], np.sin(np.asarray(s_out)), atol=1e-8)


def test_backward_integration():
    s_out = jnp.array([2.0, 1.0, 0.0])
    ys, status, _ = integrate(lambda s, y: -y, jnp.array([math.exp(-2.0)]), s_out, rtol=1e-11, atol=1e-13)
    assert int(status) == STATUS_OK
    np.testing.assert_allclose(np.asarray(ys)[:, 0], np.exp(-np.asarray(s_out)), rtol=1e-8)


def test_exit_is_located():
    # y' = 1 leaves {y < 0.5} at s = 0.5
    ys, status, s_stop = integrate(
        lambda s, y: jnp.ones(1), jnp.zeros(1), jnp.array([0.0, 1.0]),
        rtol=1e-10, atol=1e-10, inside=lambda y: y[0] < 0.5,
    )
    assert int(status) == STATUS_EXITED
    assert abs(float(s_stop) - 0.5) < 1e-9


@given(st.integers(min_value=3, max_value=80))
def test_clenshaw_curtis_integrates_polynomials(m):
    x = np.asarray(chebyshev_lobatto(m))
    w = clenshaw_curtis_weights(m)
    deg = m - 1
    assert abs(w.sum() - 1.0) < 1e-13
    assert abs(w @ x**deg - 1.0 / (deg + 1)) < 1e-12


def test_clenshaw_curtis_smooth_function():
    m = 33
    x = np.asarray(chebyshev_lobatto(m))
    assert abs(clenshaw_curtis_weights(m) @ np.exp(x) - (math.e - 1)) < 1e-14


@pytest.mark.parametrize("m", [2, 5, 65])
def test_lobatto_nodes_are_increasing_and_span_unit_interval(m):
    x = np.asarray(chebyshev_lobatto(m))
    assert x[0] == 0.0 and abs(x[-1] - 1.0) < 1e-15
    assert np.all(np.diff(x) > 0)
