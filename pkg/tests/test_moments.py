import numpy as np
import pytest
from scipy.special import erf

from gmix.moments import (
    DomainError,
    NumericalError,
    factorize,
    gaussian_expectation,
    hermite_draws,
    integral_table,
    lookup,
    mc_integral,
    one_dim_stats,
    pair_stats,
    standard_draws,
    weak_corr_2pt,
    weak_corr_3pt,
)
from gmix.taxonomies import Activation
from gmix.tuples import IntegralId, LocalFieldGaussian
from gmix.utils import relu, scaled_erf


def erf_kernel(c12: float, c11: float, c22: float) -> float:
    return 2 / np.pi * np.arcsin(c12 / np.sqrt((1 + c11) * (1 + c22)))


def test_moments_001():
    for k in (1, 2, 3):
        draws = hermite_draws(8, k)

        assert draws.z.shape == (8**k, k)
        assert draws.weights.sum() == pytest.approx(1.0, abs=1e-12)

    draws = hermite_draws(20, 2)
    second = np.einsum("n,ni,nj->ij", draws.weights, draws.z, draws.z)
    np.testing.assert_allclose(second, np.eye(2), atol=1e-12)


def test_moments_002():
    draws = standard_draws(np.random.default_rng(0), 7, 3)

    assert draws.z.shape == (7, 3)
    np.testing.assert_array_equal(draws.z[:3], -draws.z[4:7])
    assert draws.weights.sum() == pytest.approx(1.0)

    with pytest.raises(DomainError):
        standard_draws(np.random.default_rng(0), 0, 2)


def test_moments_003():
    mean = np.array([0.7, -0.3])
    cov = np.array([[0.5, 0.2], [0.2, 1.0]])
    table = integral_table(
        mean, factorize(cov), hermite_draws(40, 2), Activation.SCALED_ERF
    )

    np.testing.assert_allclose(
        table.I1, erf(mean / np.sqrt(2 * (1 + np.diag(cov)))), atol=1e-8
    )
    assert table.I2.shape == (2, 2)
    np.testing.assert_allclose(table.I2, table.I2.T, atol=1e-12)
    assert table.I4.shape == (2, 2, 2, 2)


def test_moments_004():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    draws = hermite_draws(40, 2)
    table = integral_table(
        np.zeros(2), factorize(cov), draws, Activation.SCALED_ERF
    )

    assert table.I2[0, 0] == pytest.approx(1 / 3, abs=1e-7)
    assert table.I2[0, 1] == pytest.approx(erf_kernel(0.5, 1, 1), abs=1e-7)


def test_moments_005():
    gauss = LocalFieldGaussian(
        np.zeros(2), np.array([[1.0, 0.5], [0.5, 1.0]])
    )
    value = mc_integral(
        IntegralId("I2", (0, 1)),
        gauss,
        Activation.SCALED_ERF,
        n_samples=200_000,
        rng=np.random.default_rng(0),
    )

    assert value == pytest.approx(erf_kernel(0.5, 1, 1), abs=0.01)


def test_moments_006():
    gauss = LocalFieldGaussian(np.zeros(2), np.eye(2))
    table = integral_table(
        np.zeros(2), np.eye(2), hermite_draws(4, 2), Activation.RELU
    )

    with pytest.raises(DomainError, match="takes 2 indices"):
        lookup(table, IntegralId("I2", (0,)))

    with pytest.raises(DomainError, match="Unknown integral"):
        lookup(table, IntegralId("I5", (0,)))

    with pytest.raises(DomainError, match="beyond"):
        mc_integral(IntegralId("I1", (2,)), gauss, Activation.RELU, 10)


def test_moments_007():
    u = np.array([1.0, 2.0, -1.0])
    cov = np.outer(u, u)
    L = factorize(cov)

    assert L.shape == (3, 1)
    np.testing.assert_allclose(L @ L.T, cov, atol=1e-12)

    with pytest.raises(NumericalError, match="positive semi-definite"):
        factorize(np.array([[1.0, 0.0], [0.0, -0.5]]))


def test_moments_008():
    value = gaussian_expectation(
        lambda lam: relu(lam[:, 0]), np.zeros(1), np.eye(1), n_nodes=100
    )

    assert value == pytest.approx(1 / np.sqrt(2 * np.pi), rel=1e-2)


def test_moments_009():
    def exact(eps: float) -> float:
        return pair_stats(
            scaled_erf,
            scaled_erf,
            np.array([1.0, 1.0]),
            np.array([[1.0, eps], [eps, 1.0]]),
        ).joint

    f_stats = one_dim_stats(scaled_erf, 1.0, 1.0)
    residuals = [
        abs(weak_corr_2pt(f_stats, f_stats, eps) - exact(eps))
        for eps in (0.2, 0.1)
    ]

    assert residuals[0] / residuals[1] >= 3.5
    assert weak_corr_2pt(f_stats, f_stats, 0.0) == pytest.approx(
        f_stats.mean**2
    )

    with pytest.raises(DomainError):
        weak_corr_2pt(f_stats, f_stats._replace(variance=0.0), 0.1)


def three_point_error(eps: float):
    mean = np.array([1.0, 0.5, 0.5])
    cov = np.array([[1.0, 0.5, eps], [0.5, 1.0, eps], [eps, eps, 1.0]])
    exact = gaussian_expectation(
        lambda lam: np.prod(scaled_erf(lam), axis=1), mean, cov, n_nodes=30
    )
    pair = pair_stats(scaled_erf, scaled_erf, mean[:2], cov[:2, :2])
    h_stats = one_dim_stats(scaled_erf, mean[2], 1.0)
    approx = weak_corr_3pt(pair, h_stats, eps, eps)
    zeroth = weak_corr_3pt(pair, h_stats, 0.0, 0.0)
    return abs(approx - exact), abs(zeroth - exact), pair, h_stats


def test_moments_010():
    eps = 0.05
    error, zeroth_error, pair, h_stats = three_point_error(eps)
    coarse, _, _, _ = three_point_error(2 * eps)

    assert weak_corr_3pt(pair, h_stats, 0.0, 0.0) == pytest.approx(
        pair.joint * h_stats.mean
    )
    assert error < 0.2 * zeroth_error
    assert error <= 2 * eps**2
    assert coarse / error >= 3.0

    with pytest.raises(NumericalError, match="degenerate"):
        weak_corr_3pt(pair._replace(covariance=1.0), h_stats, eps, eps)
