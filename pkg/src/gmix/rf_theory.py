"""Random features on Gaussian mixtures in the large-sample limit.

Features z_i = ψ(F_i·x/√D) are replaced by a Gaussian model with the same
per-cluster first two moments. Each cluster covariance is kept in the
structured form

    cov_α = diag(d_α) + c₀ S_α (F Fᵀ/D) S_α,

so that products with it cost O(PD) and the dense P×P matrix is only built
when it fits comfortably in memory.
"""

from typing import Callable, Optional, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import erf
from scipy.stats import norm

from gmix.mixture import labels, means, weights
from gmix.moments import DomainError, hermite_draws
from gmix.taxonomies import (
    Activation,
    CovarianceKind,
    KernelReference,
    MomentKind,
)
from gmix.tuples import (
    AbcConstants,
    FeatureMoments,
    MixtureSpec,
    RfAsymptotics,
)
from gmix.utils import activation, format_console

RANK_TOL = 1e-10
DENSE_LIMIT = 4000
QUADRATURE_NODES = 100
ESTIMATE_SIGMAS = 3.0


class RankError(Exception):
    pass


class DegenerateVarianceError(Exception):
    pass


class EstimationError(Exception):
    pass


def abc_constants(act: str, sigma: float) -> AbcConstants:
    """a = Eψ(σζ), b = Eζψ(σζ), c² = Eψ²(σζ), d² = Eζψ²(σζ)."""
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}.")

    if act == Activation.RELU:
        return AbcConstants(
            a=sigma / np.sqrt(2 * np.pi),
            b=sigma / 2,
            c2=sigma**2 / 2,
            d2=sigma**2 * np.sqrt(2 / np.pi),
        )

    psi, _ = activation(act)
    draws = hermite_draws(QUADRATURE_NODES, 1)
    zeta = draws.z[:, 0]
    values = psi(sigma * zeta)
    return AbcConstants(
        a=float(draws.weights @ values),
        b=float(draws.weights @ (zeta * values)),
        c2=float(draws.weights @ np.square(values)),
        d2=float(draws.weights @ (zeta * np.square(values))),
    )


def _noise_scale(spec: MixtureSpec) -> float:
    cov = spec.covariance

    if cov.kind != CovarianceKind.ISOTROPIC:
        raise DomainError(
            "Feature moments need an isotropic input covariance, got"
            f' "{cov.kind}".'
        )

    if not cov.sigma2 > 0:
        raise DomainError(f"sigma2 must be > 0, got {cov.sigma2}.")

    return float(np.sqrt(cov.sigma2))


def _check_projection(spec: MixtureSpec, F: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=float)

    if F.ndim != 2 or F.shape[1] != spec.dim:
        raise DomainError(
            f"Projection must be (P, {spec.dim}), got {F.shape}."
        )

    return F


def mean_projections(spec: MixtureSpec, F: np.ndarray) -> np.ndarray:
    """ρ̃_{αi} = F_i·μ^α/(Dσ), shape (A, P)."""
    sigma = _noise_scale(spec)
    return means(spec) @ F.T / (spec.dim * sigma)


def low_snr_moments(
    spec: MixtureSpec,
    F: np.ndarray,
    act: str = Activation.RELU,
    subleading: bool = False,
) -> FeatureMoments:
    """First-order expansion in the projected means.

    With `subleading`, the diagonal also carries the ρ̃(d² - 2ab) shift of
    each feature's variance.
    """
    F = _check_projection(spec, F)
    sigma = _noise_scale(spec)
    abc = abc_constants(act, sigma)
    rho = mean_projections(spec, F)
    row_norms = np.sum(np.square(F), axis=1) / spec.dim
    diag = np.broadcast_to(
        abc.c2 - abc.a**2 - abc.b**2 * row_norms, rho.shape
    ).copy()

    if subleading:
        diag += rho * (abc.d2 - 2 * abc.a * abc.b)

    # the expansion undershoots for rows of F much longer than √D
    np.maximum(diag, 0.0, out=diag)

    return FeatureMoments(
        means=abc.a + abc.b * rho,
        diag=diag,
        scales=np.ones_like(rho),
        coupling=abc.b**2,
        projection=F,
    )


def relu_moments(spec: MixtureSpec, F: np.ndarray) -> FeatureMoments:
    """Exact relu moments, valid at any signal-to-noise ratio."""
    F = _check_projection(spec, F)
    sigma = _noise_scale(spec)
    row_norms = np.sum(np.square(F), axis=1) / spec.dim
    m = sigma * mean_projections(spec, F)
    s = sigma * np.sqrt(row_norms)
    t = m / s
    cdf, pdf = norm.cdf(t), norm.pdf(t)

    mean = m * cdf + s * pdf
    second = (np.square(m) + np.square(s)) * cdf + m * s * pdf
    scales = 1 + erf(t / np.sqrt(2))
    coupling = sigma**2 / 4
    coupled_diag = coupling * np.square(scales) * row_norms

    return FeatureMoments(
        means=mean,
        diag=second - np.square(mean) - coupled_diag,
        scales=scales,
        coupling=coupling,
        projection=F,
    )


def feature_moments(
    spec: MixtureSpec,
    F: np.ndarray,
    moment_kind: str = MomentKind.RELU,
    act: str = Activation.RELU,
    subleading: bool = False,
) -> FeatureMoments:
    if moment_kind == MomentKind.RELU:
        if act != Activation.RELU:
            raise DomainError(
                f'Exact relu moments requested for activation "{act}".'
            )

        return relu_moments(spec, F)

    if moment_kind == MomentKind.LOW_SNR:
        return low_snr_moments(spec, F, act, subleading)

    raise DomainError(f'Unknown moment kind "{moment_kind}".')


def dense_covariance(moments: FeatureMoments, alpha: int) -> np.ndarray:
    F = moments.projection
    scaled = moments.scales[alpha][:, None] * F
    cov = moments.coupling * scaled @ scaled.T / F.shape[1]
    cov[np.diag_indices_from(cov)] += moments.diag[alpha]
    return cov


def _cov_apply(
    moments: FeatureMoments, alpha: int, x: np.ndarray
) -> np.ndarray:
    F = moments.projection
    s = moments.scales[alpha]
    coupled = s * (F @ (F.T @ (s * x))) / F.shape[1]
    return moments.diag[alpha] * x + moments.coupling * coupled


def feature_center(moments: FeatureMoments, spec: MixtureSpec) -> np.ndarray:
    """Mixture-wide feature mean, subtracted from z before regression."""
    return weights(spec) @ moments.means


def mixture_statistics(
    moments: FeatureMoments, spec: MixtureSpec
) -> Tuple[np.ndarray, np.ndarray]:
    """Second moment Ω^z and label covariance Φ of the centred features."""
    p, y = weights(spec), labels(spec).astype(float)
    shift = moments.means - feature_center(moments, spec)
    omega_z = sum(
        p_a * (dense_covariance(moments, a) + np.outer(shift[a], shift[a]))
        for a, p_a in enumerate(p)
    )
    return omega_z, (p * y) @ shift


def asymptotic_weights(
    omega_z: np.ndarray, phi: np.ndarray, rank_tol: float = RANK_TOL
) -> RfAsymptotics:
    """Ridgeless readout ŵ = √P Σ_{ρ_τ>0} Γ_τ Φ̃_τ/ρ_τ and its pmse.

    The cluster-level fields of the result are left empty.
    """
    values, vectors = np.linalg.eigh(0.5 * (omega_z + omega_z.T))
    top = values[-1] if values.size else 0.0

    if not top > 0:
        raise RankError("Feature covariance has no positive eigenvalue.")

    keep = values > rank_tol * top
    phi_rot = vectors[:, keep].T @ phi
    ratio = phi_rot / values[keep]
    format_console(__name__).debug(
        f"Kept {int(keep.sum())} of {values.size} feature modes."
    )

    return RfAsymptotics(
        w_hat=np.sqrt(len(phi)) * vectors[:, keep] @ ratio,
        pmse_inf=float(0.5 * (1 - phi_rot @ ratio)),
        class_error_inf=float("nan"),
        M=np.empty(0),
        Q=np.empty(0),
    )


def _structured_weights(
    moments: FeatureMoments, spec: MixtureSpec
) -> RfAsymptotics:
    p, y = weights(spec), labels(spec).astype(float)
    shift = moments.means - feature_center(moments, spec)
    phi = (p * y) @ shift
    P = len(phi)

    def matvec(x: np.ndarray) -> np.ndarray:
        x = np.ravel(x)
        total = np.zeros(P)

        for a, p_a in enumerate(p):
            outer = shift[a] * (shift[a] @ x)
            total += p_a * (_cov_apply(moments, a, x) + outer)

        return total

    beta, info = cg(
        LinearOperator((P, P), matvec=matvec, dtype=float),
        phi,
        rtol=1e-10,
        maxiter=10 * P,
    )

    if info != 0:
        raise RankError(f"Conjugate gradient did not converge (info={info}).")

    return RfAsymptotics(
        w_hat=np.sqrt(P) * beta,
        pmse_inf=float(0.5 * (1 - phi @ beta)),
        class_error_inf=float("nan"),
        M=np.empty(0),
        Q=np.empty(0),
    )


def cluster_overlaps(
    w_hat: np.ndarray, moments: FeatureMoments, spec: MixtureSpec
) -> Tuple[np.ndarray, np.ndarray]:
    """M_α = Σ ŵ_i E_α z̃_i/√P and Q_α = Σ ŵ_iŵ_j cov_α(z_i, z_j)/P."""
    beta = w_hat / np.sqrt(len(w_hat))
    shift = moments.means - feature_center(moments, spec)
    M = shift @ beta
    Q = np.array(
        [
            beta @ _cov_apply(moments, a, beta)
            for a in range(len(spec.clusters))
        ]
    )
    return M, Q


def asymptotic_class_error(
    M: np.ndarray, Q: np.ndarray, cluster_weights: np.ndarray, y: np.ndarray
) -> float:
    """½(1 - Σ_α P_α y_α erf(M_α/√(2Q_α)))"""
    M, Q = np.asarray(M, dtype=float), np.asarray(Q, dtype=float)
    silent = (Q <= 0) & (M == 0)

    if np.any((Q <= 0) & ~silent):
        raise DegenerateVarianceError(
            f"Output variance must be positive, got Q={Q.tolist()}."
        )

    margin = np.where(
        silent, 0.0, erf(M / np.sqrt(2 * np.where(silent, 1.0, Q)))
    )
    value = 0.5 * (1 - np.sum(cluster_weights * y * margin))
    return float(np.clip(value, 0.0, 1.0))


def rf_asymptotics(
    spec: MixtureSpec,
    F: np.ndarray,
    moment_kind: str = MomentKind.RELU,
    act: str = Activation.RELU,
    subleading: bool = False,
    dense_limit: int = DENSE_LIMIT,
) -> RfAsymptotics:
    moments = feature_moments(spec, F, moment_kind, act, subleading)
    P = moments.projection.shape[0]

    if P <= dense_limit:
        omega_z, phi = mixture_statistics(moments, spec)
        result = asymptotic_weights(omega_z, phi)
    else:
        format_console(__name__).info(
            f"P={P} exceeds {dense_limit}, solving matrix-free."
        )
        result = _structured_weights(moments, spec)

    M, Q = cluster_overlaps(result.w_hat, moments, spec)
    class_error = asymptotic_class_error(M, Q, weights(spec), labels(spec))
    format_console(__name__).debug(
        f"RF asymptotics (D={spec.dim}, P={P}): pmse_inf={result.pmse_inf:.5f}"
        f" class_error_inf={class_error:.5f}"
    )
    return result._replace(class_error_inf=class_error, M=M, Q=Q)


def relu_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """E relu(u) relu(v) for the Gaussian pair with covariance of x/√D, y/√D.

    Works on the last axis, so stacks of input pairs are evaluated at once.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    dim = x.shape[-1]
    norm_x = np.linalg.norm(x, axis=-1)
    norm_y = np.linalg.norm(y, axis=-1)

    if np.any(norm_x == 0) or np.any(norm_y == 0):
        raise DomainError("The relu kernel is undefined at zero norm.")

    cos = np.clip(np.sum(x * y, axis=-1) / (norm_x * norm_y), -1.0, 1.0)
    sin = np.sqrt(1 - np.square(cos))
    bracket = 2 * sin + cos * (np.pi + 2 * np.arctan2(cos, sin))
    return norm_x * norm_y * bracket / (4 * np.pi * dim)


def empirical_kernel(
    F: np.ndarray, x: np.ndarray, y: np.ndarray, act: str = Activation.RELU
) -> np.ndarray:
    """(1/P) Σ_i ψ(F_i·x/√D) ψ(F_i·y/√D) for stacks of inputs."""
    psi, _ = activation(act)
    P, dim = F.shape
    zx = psi(np.atleast_2d(x) @ F.T / np.sqrt(dim))
    zy = psi(np.atleast_2d(y) @ F.T / np.sqrt(dim))
    return np.sum(zx * zy, axis=-1) / P


def _orthogonal_mean(
    mu: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    direction = rng.standard_normal(mu.shape)
    direction -= (direction @ mu) / (mu @ mu) * mu
    return direction * np.linalg.norm(mu) / np.linalg.norm(direction)


def kernel_abc(
    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray],
    sigma: float,
    mu: np.ndarray,
    dim: int,
    n_pairs: int = 2000,
    rng: Optional[np.random.Generator] = None,
    reference: str = KernelReference.ORTHOGONAL,
) -> AbcConstants:
    """Recover a, b and c² of the features from their kernel.

    b² is the excess of the kernel between two inputs sharing the mean μ/√D
    over a reference pair, divided by the induced overlap |μ|²/D²; d² is
    not identifiable and comes back as nan.
    """
    rng = rng if rng is not None else np.random.default_rng()
    mu = np.asarray(mu, dtype=float)

    if mu.shape != (dim,):
        raise DomainError(f"mu must have shape ({dim},), got {mu.shape}.")

    first = sigma * rng.standard_normal((n_pairs, dim))
    second = sigma * rng.standard_normal((n_pairs, dim))
    c2 = float(np.mean(kernel(first, first)))
    a2 = float(np.mean(kernel(first, second)))
    overlap = float(mu @ mu) / dim**2

    if overlap == 0:
        return AbcConstants(np.sqrt(max(a2, 0.0)), 0.0, c2, float("nan"))

    shift = mu / np.sqrt(dim)
    shared = kernel(shift + first, shift + second)

    if reference == KernelReference.ORTHOGONAL:
        other = _orthogonal_mean(mu, rng) / np.sqrt(dim)
        excess = shared - kernel(shift + first, other + second)
    elif reference == KernelReference.NOISE:
        excess = shared - a2
    else:
        raise DomainError(f'Unknown kernel reference "{reference}".')

    b2 = sigma**2 * float(np.mean(excess)) / overlap
    stderr = sigma**2 * float(np.std(excess)) / (overlap * np.sqrt(n_pairs))

    if b2 < -ESTIMATE_SIGMAS * stderr:
        raise EstimationError(
            f"Negative b² estimate {b2:.3g} (standard error {stderr:.3g})."
        )

    return AbcConstants(
        np.sqrt(max(a2, 0.0)), np.sqrt(max(b2, 0.0)), c2, float("nan")
    )


def scaling_variable(sigma: float, dim: int, P: int) -> float:
    """σ D^{1/2} / P^{1/4}"""
    return sigma * np.sqrt(dim) / P**0.25
