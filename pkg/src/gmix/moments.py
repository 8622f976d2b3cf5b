"""Expectations of activation products over jointly Gaussian local fields.

Every integral is a weighted average over a set of standard normal points
(`GaussianDraws`). Seeded Monte-Carlo draws and tensor Gauss–Hermite nodes
share that representation, so relu and erf, MC and quadrature all go
through the same code.
"""

import itertools
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.hermite import hermgauss

from gmix.taxonomies import INTEGRAL_ARITY
from gmix.tuples import (
    GaussianDraws,
    IntegralId,
    IntegralTable,
    LocalFieldGaussian,
    OneDimStats,
    PairStats,
)
from gmix.utils import activation

DEFAULT_SAMPLES = 10_000
PSD_TOL = 1e-10
RANK_TOL = 1e-12


class NumericalError(Exception):
    pass


class DomainError(Exception):
    pass


def factorize(cov: np.ndarray) -> np.ndarray:
    """Factor L (k×r) with L Lᵀ = cov, dropping null directions.

    Eigenvalues down to -1e-10 (relative) are clamped to zero.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    values, vectors = np.linalg.eigh(0.5 * (cov + cov.T))
    scale = max(values[-1], 0.0) if values.size else 0.0

    if values.size and values[0] < -PSD_TOL * max(scale, 1.0):
        raise NumericalError(
            "Local-field covariance is not positive semi-definite (min"
            f" eigenvalue {values[0]:.3g})."
        )

    keep = values > RANK_TOL * scale

    return vectors[:, keep] * np.sqrt(values[keep])


def pseudo_inverse(cov: np.ndarray) -> np.ndarray:
    L = factorize(cov)
    return np.linalg.pinv(L).T @ np.linalg.pinv(L)


def standard_draws(
    rng: np.random.Generator,
    n_samples: int,
    k: int,
    antithetic: bool = True,
) -> GaussianDraws:
    if n_samples < 1:
        raise DomainError(f"n_samples must be >= 1, got {n_samples}.")

    if antithetic and n_samples > 1:
        half = rng.standard_normal(((n_samples + 1) // 2, k))
        z = np.concatenate([half, -half])[:n_samples]
    else:
        z = rng.standard_normal((n_samples, k))

    return GaussianDraws(z, np.full(n_samples, 1.0 / n_samples))


def hermite_draws(n_nodes: int, k: int) -> GaussianDraws:
    """Tensor Gauss–Hermite nodes for a k-dimensional standard normal."""
    gh_x, gh_w = hermgauss(n_nodes)
    x = np.array(list(itertools.product(*(gh_x,) * k)))
    w = np.prod(np.array(list(itertools.product(*(gh_w,) * k))), 1)
    return GaussianDraws(np.sqrt(2.0) * x, w / np.pi ** (k / 2))


def local_fields(
    mean: np.ndarray, factor: np.ndarray, draws: GaussianDraws
) -> np.ndarray:
    rank = factor.shape[1]

    if draws.z.shape[1] < rank:
        raise DomainError(
            f"Draws span {draws.z.shape[1]} dimensions, the covariance has"
            f" rank {rank}."
        )

    return np.asarray(mean, dtype=float) + draws.z[:, :rank] @ factor.T


def expect(values: np.ndarray, draws: GaussianDraws) -> np.ndarray:
    return np.tensordot(draws.weights, values, axes=(0, 0))


def integral_table(
    mean: np.ndarray,
    factor: np.ndarray,
    draws: GaussianDraws,
    act: str,
) -> IntegralTable:
    g, g_prime = activation(act)
    lam = local_fields(mean, factor, draws)
    G, Gp = g(lam), g_prime(lam)
    w = draws.weights
    wG, wGp = G * w[:, None], Gp * w[:, None]

    return IntegralTable(
        I1=w @ G,
        I2=wG.T @ G,
        I31=w @ Gp,
        I32=wGp.T @ lam,
        I3=np.einsum("nk,nl,nj->klj", wGp, lam, G, optimize=True),
        I22=wGp.T @ G,
        I42=wGp.T @ Gp,
        I43=np.einsum("nk,nl,nj->klj", wGp, Gp, G, optimize=True),
        I4=np.einsum("nk,nl,nj,na->klja", wGp, Gp, G, G, optimize=True),
    )


def lookup(table: IntegralTable, integral: IntegralId) -> float:
    arity = INTEGRAL_ARITY.get(integral.name)

    if arity is None:
        raise DomainError(f'Unknown integral "{integral.name}".')

    if len(integral.indices) != arity:
        raise DomainError(
            f"{integral.name} takes {arity} indices, got"
            f" {len(integral.indices)}."
        )

    return float(getattr(table, integral.name)[tuple(integral.indices)])


def mc_integral(
    integral: IntegralId,
    gauss: LocalFieldGaussian,
    act: str,
    n_samples: int = DEFAULT_SAMPLES,
    rng: Optional[np.random.Generator] = None,
) -> float:
    mean = np.atleast_1d(np.asarray(gauss.mean, dtype=float))

    if max(integral.indices, default=-1) >= mean.shape[0]:
        raise DomainError(
            f"{integral.name}{integral.indices} addresses neurons beyond"
            f" the {mean.shape[0]}-dimensional request."
        )

    rng = rng if rng is not None else np.random.default_rng()
    draws = standard_draws(rng, n_samples, mean.shape[0])
    table = integral_table(mean, factorize(gauss.cov), draws, act)
    return lookup(table, integral)


def gaussian_expectation(
    func: Callable[[np.ndarray], np.ndarray],
    mean: np.ndarray,
    cov: np.ndarray,
    n_nodes: int = 60,
) -> float:
    """E func(λ) for λ ~ N(mean, cov) by tensor Gauss–Hermite quadrature."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    draws = hermite_draws(n_nodes, mean.shape[0])
    lam = local_fields(mean, factorize(cov), draws)
    return float(expect(func(lam), draws))


def one_dim_stats(
    func: Callable[[np.ndarray], np.ndarray],
    mean: float,
    variance: float,
    n_nodes: int = 80,
) -> OneDimStats:
    draws = hermite_draws(n_nodes, 1)
    x = mean + np.sqrt(max(variance, 0.0)) * draws.z[:, 0]
    values = func(x)
    return OneDimStats(
        float(expect(values, draws)),
        float(expect((x - mean) * values, draws)),
        float(variance),
    )


def pair_stats(
    f: Callable[[np.ndarray], np.ndarray],
    g: Callable[[np.ndarray], np.ndarray],
    mean: np.ndarray,
    cov: np.ndarray,
    n_nodes: int = 60,
) -> PairStats:
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    draws = hermite_draws(n_nodes, 2)
    lam = local_fields(mean, factorize(cov), draws)
    values = f(lam[:, 0]) * g(lam[:, 1])
    return PairStats(
        float(expect(values, draws)),
        float(expect(values * (lam[:, 0] - mean[0]), draws)),
        float(expect(values * (lam[:, 1] - mean[1]), draws)),
        float(cov[0, 0]),
        float(cov[1, 1]),
        float(cov[0, 1]),
    )


def weak_corr_2pt(
    f_stats: OneDimStats, g_stats: OneDimStats, eps_m12: float
) -> float:
    """E f(x) g(y) to first order in the cross-covariance ε M₁₂."""
    if not (f_stats.variance > 0 and g_stats.variance > 0):
        raise DomainError(
            "Variances must be positive, got"
            f" {f_stats.variance} and {g_stats.variance}."
        )

    return f_stats.mean * g_stats.mean + eps_m12 * (
        f_stats.centered * g_stats.centered
    ) / (f_stats.variance * g_stats.variance)


def weak_corr_3pt(
    pair: PairStats,
    h_stats: OneDimStats,
    eps_m13: float,
    eps_m23: float,
) -> float:
    """E f(x₁) g(x₂) h(x₃) with x₃ weakly correlated to the pair."""
    m12 = pair.covariance
    det = pair.var_first * pair.var_second - m12**2

    if not det > 0:
        raise NumericalError(
            f"Pair covariance is degenerate (C₁C₂ - M₁₂² = {det:.3g})."
        )

    if not h_stats.variance > 0:
        raise DomainError(
            f"Variance must be positive, got {h_stats.variance}."
        )

    bracket = (
        pair.centered_first * eps_m13 * pair.var_second
        + pair.centered_second * eps_m23 * pair.var_first
        - pair.centered_first * m12 * eps_m23
        - pair.centered_second * eps_m13 * m12
    )
    return pair.joint * h_stats.mean + (
        h_stats.centered / (det * h_stats.variance)
    ) * bracket

