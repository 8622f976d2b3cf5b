import numpy as np
import pytest

from gmix.mixture import CovarianceSpec, make_mixture, sample_batch
from gmix.moments import DomainError, gaussian_expectation
from gmix.rf_theory import (
    DegenerateVarianceError,
    RankError,
    abc_constants,
    asymptotic_class_error,
    asymptotic_weights,
    dense_covariance,
    empirical_kernel,
    feature_center,
    feature_moments,
    kernel_abc,
    low_snr_moments,
    mixture_statistics,
    relu_kernel,
    relu_moments,
    rf_asymptotics,
    scaling_variable,
)
from gmix.sgd import init_rf, predict, train_rf
from gmix.taxonomies import Activation, KernelReference, MomentKind
from gmix.tuples import Cluster
from gmix.utils import relu
from tests.utils import QuickTrain, SmallXor, XorParams, xor


def test_rf_theory_001():
    sigma = 0.7
    abc = abc_constants(Activation.RELU, sigma)

    def moment(func):
        return gaussian_expectation(
            lambda lam: func(lam[:, 0]), np.zeros(1), np.eye(1), 120
        )

    assert abc.a == pytest.approx(
        moment(lambda z: relu(sigma * z)), rel=1e-2
    )
    assert abc.b == pytest.approx(
        moment(lambda z: z * relu(sigma * z)), rel=1e-2
    )
    assert abc.c2 == pytest.approx(
        moment(lambda z: relu(sigma * z) ** 2), rel=1e-2
    )
    assert abc.d2 == pytest.approx(
        moment(lambda z: z * relu(sigma * z) ** 2), rel=1e-2
    )


def test_rf_theory_002():
    sigma = 0.5
    abc = abc_constants(Activation.SCALED_ERF, sigma)

    assert abc.a == pytest.approx(0.0, abs=1e-12)
    assert abc.d2 == pytest.approx(0.0, abs=1e-12)
    assert abc.b == pytest.approx(
        sigma * np.sqrt(2 / np.pi) / np.sqrt(1 + sigma**2), rel=1e-8
    )

    with pytest.raises(DomainError):
        abc_constants(Activation.RELU, -1.0)


def test_rf_theory_003():
    x = np.array([3.0, 4.0, 0.0])
    y = np.array([0.0, 0.0, 2.0])

    assert relu_kernel(x, x) == pytest.approx(25 / 6)
    assert relu_kernel(x, y) == pytest.approx(10 / (2 * np.pi * 3))
    assert relu_kernel(x, -x) == pytest.approx(0.0, abs=1e-12)

    stacked = relu_kernel(np.stack([x, x]), np.stack([x, y]))
    np.testing.assert_allclose(stacked, [25 / 6, 10 / (6 * np.pi)])

    with pytest.raises(DomainError, match="zero norm"):
        relu_kernel(x, np.zeros(3))


def test_rf_theory_004():
    rng = np.random.default_rng(0)
    F = rng.standard_normal((40_000, 6))
    x = rng.standard_normal((3, 6))
    y = rng.standard_normal((3, 6))

    np.testing.assert_allclose(
        empirical_kernel(F, x, y), relu_kernel(x, y), rtol=0.05, atol=1e-3
    )


def test_rf_theory_005():
    omega = np.diag([2.0, 1.0, 0.5])
    result = asymptotic_weights(omega, np.zeros(3))

    assert result.pmse_inf == pytest.approx(0.5)
    np.testing.assert_array_equal(result.w_hat, np.zeros(3))

    phi = np.array([0.3, -0.4, 0.0])
    single = asymptotic_weights(np.outer(phi, phi), phi)

    assert single.pmse_inf == pytest.approx(0.0, abs=1e-12)

    with pytest.raises(RankError):
        asymptotic_weights(np.zeros((3, 3)), phi)


def test_rf_theory_006():
    p = np.full(4, 0.25)
    y = np.array([1, 1, -1, -1])

    assert asymptotic_class_error(
        np.zeros(4), np.ones(4), p, y
    ) == pytest.approx(0.5)
    assert asymptotic_class_error(
        np.zeros(4), np.zeros(4), p, y
    ) == pytest.approx(0.5)
    assert asymptotic_class_error(
        10.0 * y, np.full(4, 0.01), p, y
    ) == pytest.approx(0.0, abs=1e-12)

    with pytest.raises(DegenerateVarianceError):
        asymptotic_class_error(np.ones(4), np.zeros(4), p, y)


def test_rf_theory_007():
    dim, P, sigma = 40, 5, 0.5
    spec = xor(SmallXor(dim=dim, sigma2=sigma**2))
    F = np.random.default_rng(1).standard_normal((P, dim))
    moments = relu_moments(spec, F)
    rng = np.random.default_rng(2)

    for alpha, cluster in enumerate(spec.clusters):
        X = cluster.mean_scaled / np.sqrt(dim) + sigma * rng.standard_normal(
            (200_000, dim)
        )
        Z = relu(X @ F.T / np.sqrt(dim))

        np.testing.assert_allclose(
            Z.mean(axis=0), moments.means[alpha], atol=0.01
        )
        np.testing.assert_allclose(
            np.cov(Z, rowvar=False),
            dense_covariance(moments, alpha),
            atol=0.01,
        )


def test_rf_theory_008():
    spec = xor(SmallXor(dim=30, sigma2=0.1))
    F = np.random.default_rng(3).standard_normal((60, 30))
    dense = rf_asymptotics(spec, F, dense_limit=60)
    iterative = rf_asymptotics(spec, F, dense_limit=0)

    assert dense.pmse_inf == pytest.approx(iterative.pmse_inf, abs=1e-6)
    assert dense.class_error_inf == pytest.approx(
        iterative.class_error_inf, abs=1e-6
    )
    np.testing.assert_allclose(dense.M, iterative.M, atol=1e-6)
    assert 0.0 <= dense.pmse_inf <= 0.5


def test_rf_theory_009():
    spec = xor(SmallXor(dim=30, sigma2=0.1))
    F = np.random.default_rng(4).standard_normal((20, 30))
    moments = low_snr_moments(spec, F)
    shifted = low_snr_moments(spec, F, subleading=True)
    abc = abc_constants(Activation.RELU, np.sqrt(0.1))
    rho = F @ np.stack([c.mean_scaled for c in spec.clusters]).T
    rho = rho.T / (30 * np.sqrt(0.1))

    np.testing.assert_allclose(moments.means, abc.a + abc.b * rho)
    kept = (moments.diag > 0) & (shifted.diag > 0)

    assert np.all(moments.diag >= 0) and np.all(shifted.diag >= 0)
    np.testing.assert_allclose(
        (shifted.diag - moments.diag)[kept],
        (rho * (abc.d2 - 2 * abc.a * abc.b))[kept],
    )
    assert moments.coupling == pytest.approx(abc.b**2)

    omega_z, phi = mixture_statistics(moments, spec)
    np.testing.assert_allclose(omega_z, omega_z.T, atol=1e-12)
    assert phi.shape == (20,)


def test_rf_theory_010():
    spec = xor(SmallXor(dim=4))
    F = np.ones((3, 4))
    dense = make_mixture(
        4,
        [
            Cluster(np.ones(4), 1, 0.5),
            Cluster(-np.ones(4), -1, 0.5),
        ],
        CovarianceSpec.dense(np.eye(4)),
    )

    with pytest.raises(DomainError, match="isotropic"):
        feature_moments(dense, F)

    with pytest.raises(DomainError, match="Exact relu moments"):
        feature_moments(spec, F, MomentKind.RELU, Activation.SCALED_ERF)

    with pytest.raises(DomainError, match="Projection"):
        feature_moments(spec, np.ones((3, 5)))


def test_rf_theory_011():
    dim, sigma = 100, 0.5
    mu = np.zeros(dim)
    mu[0] = np.sqrt(dim)
    abc = kernel_abc(
        relu_kernel, sigma, mu, dim, 20_000, np.random.default_rng(5)
    )

    assert abc.c2 == pytest.approx(sigma**2 / 2, rel=0.05)
    assert abc.a == pytest.approx(sigma / np.sqrt(2 * np.pi), rel=0.05)
    assert abc.b == pytest.approx(sigma / 2, rel=0.1)
    assert np.isnan(abc.d2)


def test_rf_theory_012():
    dim = 10
    rng = np.random.default_rng(6)
    zero = kernel_abc(relu_kernel, 0.5, np.zeros(dim), dim, 100, rng)

    assert zero.b == 0.0

    with pytest.raises(DomainError, match="reference"):
        kernel_abc(
            relu_kernel, 0.5, np.ones(dim), dim, 100, rng, reference="none"
        )

    noise = kernel_abc(
        relu_kernel,
        0.5,
        np.ones(dim),
        dim,
        100,
        rng,
        reference=KernelReference.NOISE,
    )
    assert noise.b >= 0.0


def test_rf_theory_013():
    assert scaling_variable(0.1, 400, 16) == pytest.approx(1.0)


def test_rf_theory_014():
    dim, P, sigma = 40, 30, 0.5
    spec = xor(XorParams(dim=dim, mu_over_sqrt_d=1e-3, sigma2=sigma**2))
    G = np.random.default_rng(7).standard_normal((P, dim))
    F = np.sqrt(dim) * G / np.linalg.norm(G, axis=1, keepdims=True)
    exact, linear = relu_moments(spec, F), low_snr_moments(spec, F)

    np.testing.assert_allclose(exact.means, linear.means, atol=1e-6)

    for alpha in range(len(spec.clusters)):
        np.testing.assert_allclose(
            dense_covariance(exact, alpha),
            dense_covariance(linear, alpha),
            atol=1e-4,
        )


def test_rf_theory_015():
    errors = []

    for dim in (100, 400, 1600):
        spec = xor(XorParams(dim=dim, mu_over_sqrt_d=1.0, sigma2=0.05))
        F = np.random.default_rng(dim).standard_normal((dim, dim))
        errors.append(rf_asymptotics(spec, F).class_error_inf)

    assert errors == sorted(errors)
    assert errors[-1] - errors[0] > 0.05
    assert errors[-1] < 0.5


def master_curve_error(dim: int, P: int, scale: float) -> float:
    sigma = scale * P**0.25 / np.sqrt(dim)
    spec = xor(XorParams(dim=dim, mu_over_sqrt_d=1.0, sigma2=sigma**2))
    F = np.random.default_rng(dim + P).standard_normal((P, dim))

    assert scaling_variable(sigma, dim, P) == pytest.approx(scale)

    return rf_asymptotics(spec, F).class_error_inf


def test_rf_theory_016():
    collapsed = [
        master_curve_error(dim, P, 1.0)
        for dim, P in ((800, 800), (800, 1600), (1600, 1600))
    ]

    assert max(collapsed) - min(collapsed) < 0.02
    assert master_curve_error(800, 800, 2.0) > max(collapsed) + 0.05
    assert master_curve_error(800, 800, 0.5) < min(collapsed) - 0.05


def test_rf_theory_017():
    dim, P = 20, 40
    spec = xor(SmallXor(dim=dim))
    rf = init_rf(P, dim, seed=0)
    moments = relu_moments(spec, rf.F)
    rf = rf._replace(feature_mean=feature_center(moments, spec))
    theory = rf_asymptotics(spec, rf.F)
    cfg = QuickTrain(
        lr=0.5, steps=200_000, eval_every=200_000, eval_set_size=20_000
    )
    observations, trained = train_rf(rf, spec, cfg)
    X, _, _ = sample_batch(spec, np.random.default_rng(8), 20_000)
    fitted = predict(trained, X)
    analytic = predict(trained._replace(w=theory.w_hat), X)

    assert observations[-1].pmse == pytest.approx(
        2 * theory.pmse_inf, abs=0.05
    )
    assert observations[-1].class_error == pytest.approx(
        theory.class_error_inf, abs=0.03
    )
    assert np.corrcoef(fitted, analytic)[0, 1] > 0.9
