import numpy as np
import pytest
from scipy.special import erf

from gmix.dynamics import eom_step
from gmix.fixed_point import (
    ansatz_state,
    expand_ansatz,
    initial_ansatz,
    oracle_error,
    solve_xor_fixed_point,
    xor_plane_mixture,
)
from gmix.mixture import mean_overlaps
from gmix.moments import DomainError, hermite_draws
from gmix.taxonomies import Activation, VRule
from gmix.tuples import FixedPointSettings, OdeConfig
from tests.utils import QuadratureSolve


def test_fixed_point_001():
    assert oracle_error(1.0, 0.5) == pytest.approx(0.5 * (1 - erf(1.0) ** 2))
    assert oracle_error(10.0, 0.1) == pytest.approx(0.0, abs=1e-12)
    assert oracle_error(1e-6, 10.0) == pytest.approx(0.5, abs=1e-6)
    assert oracle_error(1.0, 0.0) == 0.0

    with pytest.raises(DomainError):
        oracle_error(1.0, -0.1)


def test_fixed_point_002():
    m_free = np.array([1.0, -0.5, 0.2, 0.3])
    M, Q = expand_ansatz(m_free, sigma=0.5, mu_over_sqrt_d=2.0)
    a = np.array([1.0, -0.5, 0.2, 0.3])
    b = np.array([0.2, 0.3, 1.0, -0.5])

    np.testing.assert_array_equal(M[0], a)
    np.testing.assert_array_equal(M[1], -a)
    np.testing.assert_array_equal(M[2], b)
    np.testing.assert_array_equal(M[3], -b)
    np.testing.assert_allclose(
        Q, 0.25 * (np.outer(a, a) + np.outer(b, b)) / 4.0
    )
    np.testing.assert_array_equal(Q, Q.T)


def test_fixed_point_003():
    spec = xor_plane_mixture(0.3, 1.5)
    T = mean_overlaps(spec)

    assert spec.dim == 2
    assert T[0, 0] == pytest.approx(2.25)
    assert T[2, 2] == pytest.approx(2.25)
    assert T[0, 2] == 0.0
    assert spec.covariance.sigma2 == pytest.approx(0.09)


def test_fixed_point_004():
    first, second = initial_ansatz(6, seed=4), initial_ansatz(6, seed=4)

    np.testing.assert_array_equal(first.m_free, second.m_free)
    assert first.m_free.shape == (6,)
    np.testing.assert_array_equal(first.v, np.zeros(6))

    for K in (2, 5):
        with pytest.raises(DomainError, match="even K >= 4"):
            solve_xor_fixed_point(K, 0.3, 0.1, 0.01)


def test_fixed_point_005():
    settings = FixedPointSettings(mc_samples=1000, max_iter=20, seed=3)
    first = solve_xor_fixed_point(4, 0.3, 0.1, 0.01, settings)
    second = solve_xor_fixed_point(4, 0.3, 0.1, 0.01, settings)

    np.testing.assert_array_equal(first.ansatz.m_free, second.ansatz.m_free)
    assert first.pmse == second.pmse
    np.testing.assert_array_equal(first.M[1], -first.M[0])
    assert 0.0 <= first.class_error <= 1.0


def test_fixed_point_006():
    settings = QuadratureSolve(mu_over_sqrt_d=1.0)
    sigma = np.sqrt(0.1)
    results = []
    init = None

    for kappa in (1e-4, 1e-2, 1.0):
        result = solve_xor_fixed_point(4, sigma, 0.1, kappa, settings, init)
        results.append(result)
        init = result.ansatz

    assert all(r.converged for r in results)
    assert results[0].pmse < 0.9
    assert np.linalg.norm(results[0].ansatz.m_free) > 0.1
    assert all(
        later.pmse >= earlier.pmse - 1e-9
        for earlier, later in zip(results, results[1:])
    )
    assert results[-1].pmse <= 1.0 + 1e-9


def test_fixed_point_007():
    settings = QuadratureSolve(activation=Activation.SCALED_ERF)
    result = solve_xor_fixed_point(4, 0.3, 0.1, 0.01, settings, init=1)

    assert result.iterations >= 1
    assert result.converged == (result.residual_norm < settings.tol)
    assert result.Q.shape == (4, 4)
    np.testing.assert_allclose(result.ansatz.v, 0.0, atol=1e-9)
    assert result.pmse == pytest.approx(1.0, abs=1e-9)

    with pytest.raises(DomainError, match="second-layer rule"):
        solve_xor_fixed_point(
            4, 0.3, 0.1, 0.01, settings._replace(v_rule="median")
        )


def test_fixed_point_008():
    sigma = np.sqrt(0.05)

    for snr in (1.0, 3.0):
        settings = QuadratureSolve(mu_over_sqrt_d=snr * sigma)
        result = solve_xor_fixed_point(4, sigma, 0.1, 1e-3, settings)
        oracle = oracle_error(snr * sigma, sigma)

        assert result.converged, snr
        assert np.all(np.isfinite(result.ansatz.v))
        assert np.abs(result.ansatz.v).max() < 1e3
        assert result.class_error == pytest.approx(oracle, abs=0.02)


def test_fixed_point_009():
    sigma, eta, kappa = 0.3, 0.1, 1e-2
    settings = QuadratureSolve()
    result = solve_xor_fixed_point(4, sigma, eta, kappa, settings)
    spec = xor_plane_mixture(sigma, settings.mu_over_sqrt_d)
    state = ansatz_state(result.ansatz.m_free, result.ansatz.v, sigma, spec)
    cfg = OdeConfig(lr=eta, weight_decay=kappa, dt=0.1)
    new = eom_step(state, spec, cfg, hermite_draws(20, 2))

    assert result.converged
    np.testing.assert_allclose(new.m, state.m, atol=1e-5)
    np.testing.assert_allclose(new.v, state.v, atol=1e-5)


def test_fixed_point_010():
    sigma = 0.3
    means_rule = QuadratureSolve(v_rule=VRule.MEANS, max_iter=50)
    result = solve_xor_fixed_point(4, sigma, 0.1, 1e-2, means_rule)

    assert np.all(np.isfinite(result.ansatz.v))
    assert np.abs(result.ansatz.v).max() <= 1.0 / np.sqrt(1e-2) + 1e-9
