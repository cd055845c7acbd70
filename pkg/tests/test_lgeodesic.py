import math

import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from rfent import AdmissibilityError, ChartError, ConfigurationError, DomainError, TruncationError
from rfent import lgeodesic as lg
from rfent.geometry import ManifoldModel

vectors2 = st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)).map(np.array)


# -- lengths of given paths -------------------------------------------------------


def test_flat_straight_path_length(flat2):
    V = np.array([0.6, -0.8])
    assert abs(lg.lplus_length(flat2, lambda eta: 2 * jnp.sqrt(eta) * V, 1.0) - 2 * V @ V) < 1e-12


def test_constant_path_has_zero_length_on_flat(flat2):
    assert lg.lplus_length(flat2, lambda eta: jnp.zeros(2) * eta, 1.0) == 0.0


def test_constant_path_on_hyperbolic_plane(hyp2):
    # int_0^1 sqrt(eta) (-2 / (1 + 2 eta)) d eta = sqrt(2) atan(sqrt(2)) - 2
    exact = math.sqrt(2) * math.atan(math.sqrt(2)) - 2
    assert abs(exact - oracles.curvature_action(-1, 2, 1.0)) < 1e-12
    assert abs(lg.lplus_length(hyp2, lambda eta: jnp.zeros(2) * eta, 1.0) - exact) < 1e-10


def test_path_length_quadrature_converges(hyp2):
    def path(eta):
        s = jnp.sqrt(eta)
        return jnp.array([0.3 * s + 0.1 * eta, 0.2 * jnp.sin(s)])

    ref = lg.lplus_length(hyp2, path, 0.8, order=128)
    errs = [abs(lg.lplus_length(hyp2, path, 0.8, order=k) - ref) for k in (4, 8, 16)]
    assert errs[1] < errs[0] and errs[2] <= max(errs[1] * 1e-2, 1e-12)
    assert errs[2] < 1e-8 * abs(ref)


def test_inadmissible_and_out_of_chart_paths(hyp2):
    with pytest.raises(AdmissibilityError):
        lg.lplus_length(hyp2, lambda eta: jnp.array([eta**0.25, 0.0]), 0.5)
    with pytest.raises(AdmissibilityError):
        lg.lplus_length(hyp2, lambda eta: jnp.array([0.1 + eta, 0.0]), 0.5)
    with pytest.raises(ChartError):
        lg.lplus_length(hyp2, lambda eta: jnp.array([2 * jnp.sqrt(eta), 0.0]), 1.0)
    with pytest.raises(ConfigurationError):
        lg.lplus_length(hyp2, 42, 1.0)


# -- shooting -----------------------------------------------------------------------


@given(vectors2, st.floats(0.05, 3.0))
def test_flat_geodesics_are_straight(V, t):
    geod = lg.shoot(ManifoldModel.flat(2), V, t)
    np.testing.assert_allclose(geod.endpoint, 2 * math.sqrt(t) * V, atol=1e-12)
    assert abs(geod.length - 2 * math.sqrt(t) * V @ V) < 1e-10 * (1 + V @ V)
    assert abs(geod.reduced_length - V @ V) < 1e-10 * (1 + V @ V)
    np.testing.assert_allclose(geod.dbeta[0], 2 * V, atol=1e-14)
    assert geod.K == 0.0


def test_rest_point_stays_put(hyp2, sphere2):
    for m in (hyp2, sphere2):
        geod = lg.shoot(m, np.zeros(2), 0.3)
        assert np.max(np.abs(geod.beta)) == 0.0


@pytest.mark.parametrize("kappa,n,t", [(-1.0, 2, 0.5), (-1.0, 3, 1.0), (1.0, 2, 0.3), (1.0, 3, 0.2)])
def test_einstein_geodesics_match_closed_form(kappa, n, t):
    model = ManifoldModel.einstein(n, kappa)
    for v, angle in [(1.0, 0.0), (0.4, 1.0), (1.7, 2.5)]:
        V = v * oracles.unit(n, angle)
        geod = lg.shoot(model, V, t)
        d = model.distance_from_basepoint(geod.endpoint)
        assert abs(d - oracles.distance(kappa, n, v, t)) < 1e-8
        assert abs(geod.length - oracles.length(kappa, n, v, t)) < 1e-8 * (1 + abs(geod.length))
        # the geodesic stays on the ray of V
        cross = np.linalg.norm(geod.endpoint - (geod.endpoint @ V) / (V @ V) * V)
        assert cross < 1e-10


def test_samples_reproduce_length(hyp2, cigar):
    for m in (hyp2, cigar):
        geod = lg.shoot(m, [0.7, -0.3], 0.9)
        assert abs(lg.lplus_length(m, geod, 0.9) - geod.length) <= 1e-8 * abs(geod.length)
        assert len(geod.samples) == len(geod.s)


def test_shoot_errors(sphere2, hyp2):
    with pytest.raises(TruncationError) as exc:
        lg.shoot(sphere2, [6.0, 0.0], 0.3)  # passes the antipode
    assert 0 < exc.value.exit_time < 0.3
    with pytest.raises(DomainError):
        lg.shoot(sphere2, [0.1, 0.0], 0.6)
    with pytest.raises(ConfigurationError):
        lg.shoot(hyp2, [math.nan, 0.0], 0.5)


def test_numerical_warped_flow_is_rejected():
    from rfent.geometry import WarpedFlow

    with pytest.raises(ConfigurationError):
        lg.shoot(WarpedFlow(2, "sin", mesh=16), [0.1, 0.0], 0.1)


# -- inverse map --------------------------------------------------------------------


def test_flat_inverse(flat2):
    V0 = np.array([0.3, -1.2])
    V, geod = lg.exp_inverse(flat2, 2 * math.sqrt(0.7) * V0, 0.7)
    np.testing.assert_allclose(V, V0, atol=1e-9)
    assert abs(lg.reduced_length(flat2, 2 * math.sqrt(0.7) * V0, 0.7) - V0 @ V0) < 1e-9
    assert abs(lg.reduced_length(flat2, np.zeros(2), 0.7)) < 1e-12


def test_basepoint_inverse_is_zero(hyp2):
    V, _ = lg.exp_inverse(hyp2, np.zeros(2), 1.0)
    assert np.linalg.norm(V) < 1e-9


@given(vectors2, st.sampled_from([0.1, 1.0]))
def test_round_trip_hyperbolic_and_cigar(V, t):
    for m in (ManifoldModel.hyperbolic(2), ManifoldModel.cigar()):
        geod = lg.shoot(m, V, t, with_k=False)
        V_back, _ = lg.exp_inverse(m, geod.endpoint, t)
        np.testing.assert_allclose(V_back, V, atol=1e-6)


def test_round_trip_sphere(sphere2):
    for V in ([0.5, 0.2], [-1.0, 0.7], [1.2, -0.4]):
        geod = lg.shoot(sphere2, V, 0.1, with_k=False)
        V_back, _ = lg.exp_inverse(sphere2, geod.endpoint, 0.1)
        np.testing.assert_allclose(V_back, V, atol=1e-6)


def test_sphere_near_antipode_has_competing_roots(sphere2):
    # a point slightly past the conjugate radius along e1 is reached by two
    # geodesics; the shorter one goes around the other side
    t = 0.05
    r_star = oracles.conjugate_radius(1.0, 2, t)
    geod = lg.shoot(sphere2, [0.93 * r_star, 0.0], t, with_k=False)
    roots = lg.shooting_roots(sphere2, geod.endpoint, t, extra_seeds=[[0.93 * r_star, 0.0]])
    assert len(roots.L) >= 1
    assert roots.L[0] <= geod.length + 1e-9
    oracle = lg.minimize_path(sphere2, geod.endpoint, t, degree=12, starts=3)
    assert roots.L[0] <= oracle + 1e-6 * (1 + abs(oracle))


@pytest.mark.parametrize("y,t", [([0.4, 0.2], 0.5), ([0.0, 0.6], 1.0)])
def test_shooting_minimum_matches_path_minimisation(hyp2, y, t):
    L = lg.reduced_length(hyp2, y, t) * 2 * math.sqrt(t)
    oracle = lg.minimize_path(hyp2, y, t)
    assert L <= oracle + 1e-8
    assert oracle - L < 1e-5 * (1 + abs(L))


def test_tie_break_is_lexicographic():
    v = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    roots = lg._dedupe(v, np.array([2.0, 2.0, 3.0]), np.zeros(3))
    np.testing.assert_array_equal(roots.V[0], [-1.0, 0.0])
    assert not roots.unique


# -- K integral and identities -----------------------------------------------------------


def test_flat_k_relation(flat2):
    V = np.array([0.5, -0.25])
    geod = lg.shoot(flat2, V, 0.8)
    dg = lg.k_integral(geod)
    assert dg.K == 0.0
    assert dg.kr_residual < 1e-12
    np.testing.assert_allclose(geod.X_end, V / math.sqrt(0.8), atol=1e-12)


def test_hyperbolic_k_at_rest(hyp2):
    geod = lg.shoot(hyp2, np.zeros(2), 1.0)
    dg = lg.k_integral(geod)
    K = oracles.k_at_rest(-1.0, 2, 1.0)
    assert abs(dg.K - K) < 1e-9 and abs(geod.K - K) < 1e-9
    assert dg.kr_residual <= 1e-6
    assert abs(geod.length - oracles.curvature_action(-1.0, 2, 1.0)) < 1e-10


@given(vectors2, st.floats(0.1, 1.5))
def test_identities_on_cigar(V, t):
    geod = lg.shoot(ManifoldModel.cigar(), V, t)
    dg = lg.k_integral(geod)
    assert dg.kr_residual <= 1e-6 * (1 + abs(geod.length))
    assert abs(dg.K - dg.K_ode) <= 1e-8 * (1 + abs(dg.K))
    assert dg.el_defect <= 1e-6
    assert dg.grad_identity_residual <= 1e-4 * max(1.0, float(np.linalg.norm(dg.grad_formula)))


def test_hx_samples_flat(flat2):
    dg = lg.k_integral(lg.shoot(flat2, [1.0, 0.0], 1.0), grad_check=False)
    assert np.all(dg.HX_samples == 0.0)
    assert math.isnan(dg.grad_identity_residual)
