"""Long-time performance of the 2LNN on the XOR mixture."""

from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.optimize import root
from scipy.special import erfc

from gmix.dynamics import (
    class_error_from_state,
    pmse_from_state,
    vector_field,
)
from gmix.mixture import build_xor_mixture, labels, mean_overlaps, weights
from gmix.moments import (
    DomainError,
    factorize,
    hermite_draws,
    integral_table,
    standard_draws,
)
from gmix.taxonomies import VRule
from gmix.tuples import (
    FixedPointResult,
    FixedPointSettings,
    GaussianDraws,
    MixtureSpec,
    OdeConfig,
    OrderParameterState,
    SpectrumGrid,
    XorAnsatz,
)
from gmix.utils import activation, format_console, stream

RESIDUAL_STREAM = 2
FLOW_GROWTH = 2.0
TRIVIAL_SCALE = 1e-2
POLISH_XTOL = 1e-12

Residual = Callable[[np.ndarray], np.ndarray]


class ConvergenceError(Exception):
    pass


def oracle_error(mu_norm_over_sqrtD: float, sigma: float) -> float:
    """Error of the nearest-mean classifier, ½(1 - erf(|μ|/(2σ√D))²)."""
    if sigma < 0 or (sigma == 0 and not mu_norm_over_sqrtD > 0):
        raise DomainError(f"sigma must be > 0, got {sigma}.")

    if sigma == 0:
        return 0.0

    tail = erfc(abs(mu_norm_over_sqrtD) / (2 * sigma))
    return 0.5 * tail * (2 - tail)


def _halves(K: int) -> int:
    if K < 4 or K % 2:
        raise DomainError(f"The XOR ansatz needs an even K >= 4, got {K}.")

    return K // 2


def expand_ansatz(
    m_free: np.ndarray, sigma: float, mu_over_sqrt_d: float = 1.0
) -> Tuple[np.ndarray, np.ndarray]:
    """Full overlaps M (clusters +0, +1, -0, -1) and Q from the free ones.

    Neuron k + K/2 mirrors neuron k across the diagonal of the mean plane.
    """
    half = _halves(len(m_free))
    a_half, b_half = m_free[:half], m_free[half:]
    a = np.concatenate([a_half, b_half])
    b = np.concatenate([b_half, a_half])
    M = np.stack([a, -a, b, -b])
    Q = sigma**2 * (np.outer(a, a) + np.outer(b, b)) / mu_over_sqrt_d**2
    return M, Q


def xor_plane_mixture(sigma: float, mu_over_sqrt_d: float) -> MixtureSpec:
    """A D=2 XOR mixture carrying the same T and cluster weights."""
    return build_xor_mixture(2, mu_over_sqrt_d * np.sqrt(2.0), sigma**2)


def ansatz_state(
    m_free: np.ndarray, v: np.ndarray, sigma: float, spec: MixtureSpec
) -> OrderParameterState:
    mu_over_sqrt_d = np.sqrt(mean_overlaps(spec)[0, 0])
    M, q = expand_ansatz(m_free, 1.0, mu_over_sqrt_d)
    T = mean_overlaps(spec)
    return OrderParameterState(
        m=M[:, :, None],
        q=q[:, :, None],
        v=np.asarray(v, dtype=float),
        T=T,
        chi=sigma**4,
        t=0.0,
        spectrum=SpectrumGrid(np.array([sigma**2]), np.array([1.0])),
        T_density=T[:, :, None],
    )


def second_layer(
    m_free: np.ndarray,
    sigma: float,
    kappa: float,
    spec: MixtureSpec,
    settings: FixedPointSettings,
    draws: GaussianDraws,
) -> np.ndarray:
    """Second-layer weights implied by the first-layer overlaps.

    The regression rule solves dv = 0 exactly. The means rule asks for
    outputs ±1 on the cluster means, with a κ ridge keeping v bounded when
    the neurons are nearly silent on the means.
    """
    mu_over_sqrt_d = np.sqrt(mean_overlaps(spec)[0, 0])
    M, Q = expand_ansatz(m_free, sigma, mu_over_sqrt_d)
    y = labels(spec).astype(float)

    if settings.v_rule == VRule.MEANS:
        g, _ = activation(settings.activation)
        G = g(M)
        gram = G.T @ G + kappa * np.eye(len(m_free))
        return np.linalg.lstsq(gram, G.T @ y, rcond=None)[0]

    if settings.v_rule == VRule.REGRESSION:
        factor = factorize(Q)
        gram = kappa * np.eye(len(m_free))
        target = np.zeros(len(m_free))

        for alpha, (p, label) in enumerate(zip(weights(spec), y)):
            table = integral_table(
                M[alpha], factor, draws, settings.activation
            )
            gram += p * table.I2
            target += p * label * table.I1

        return np.linalg.lstsq(gram, target, rcond=None)[0]

    raise DomainError(f'Unknown second-layer rule "{settings.v_rule}".')


def initial_ansatz(K: int, seed: int) -> XorAnsatz:
    """Neurons alternating between the two label +1 means, slightly jittered.

    Their mirror images cover the label -1 means.
    """
    half = _halves(K)
    rng = np.random.default_rng(seed)
    a = np.where(np.arange(half) % 2 == 0, 1.0, -1.0)
    a += 0.1 * rng.standard_normal(half)
    b = 0.1 * rng.standard_normal(half)
    return XorAnsatz(np.concatenate([a, b]), np.zeros(K))


def solve_xor_fixed_point(
    K: int,
    sigma: float,
    eta: float,
    kappa: float,
    settings: FixedPointSettings = FixedPointSettings(),
    init: Optional[Union[XorAnsatz, int]] = None,
) -> FixedPointResult:
    """Zero of the reduced first-layer equations under the XOR ansatz.

    The reduced equations are first followed in pseudo-time from the
    initial ansatz, then the endpoint is polished with a root finder. A
    polish that drops onto the trivial root m = 0 while the flow stayed
    away from it is discarded.

    The draws are frozen for the whole solve so that the residual is a
    deterministic function of the free overlaps.
    """
    _halves(K)

    if init is None or isinstance(init, (int, np.integer)):
        init = initial_ansatz(K, settings.seed if init is None else init)

    spec = xor_plane_mixture(sigma, settings.mu_over_sqrt_d)
    cfg = OdeConfig(
        lr=eta,
        weight_decay=kappa,
        activation=settings.activation,
        mc_samples=settings.mc_samples,
        seed=settings.seed,
    )

    if settings.quadrature_nodes:
        draws = hermite_draws(settings.quadrature_nodes, 2)
    else:
        draws = standard_draws(
            stream(settings.seed, RESIDUAL_STREAM), settings.mc_samples, K
        )

    half = K // 2

    def state_of(x: np.ndarray) -> OrderParameterState:
        v = second_layer(x, sigma, kappa, spec, settings, draws)
        return ansatz_state(x, v, sigma, spec)

    def residual(x: np.ndarray) -> np.ndarray:
        dm, _, _ = vector_field(state_of(x), spec, cfg, draws)
        dm = dm[:, :, 0]
        r_a = 0.5 * (dm[0, :half] + dm[2, half:])
        r_b = 0.5 * (dm[2, :half] + dm[0, half:])
        return np.concatenate([r_a, r_b])

    start = np.array(init.m_free, dtype=float)
    x, norm, iterations = _follow_flow(residual, start, settings)
    x, norm, iterations = _polish(
        residual, x, norm, iterations, start, settings
    )
    converged = norm < settings.tol

    if not converged:
        format_console(__name__).warning(
            f"Fixed point not converged (K={K}, sigma={sigma:g},"
            f" kappa={kappa:g}): residual {norm:.3g}."
        )

    state = state_of(x)
    M, Q = expand_ansatz(x, sigma, settings.mu_over_sqrt_d)

    return FixedPointResult(
        ansatz=XorAnsatz(x, state.v),
        residual_norm=norm,
        pmse=pmse_from_state(state, spec, cfg, draws),
        class_error=class_error_from_state(state, spec, cfg),
        converged=converged,
        M=M,
        Q=Q,
        iterations=iterations,
    )


def _follow_flow(
    residual: Residual, x: np.ndarray, settings: FixedPointSettings
) -> Tuple[np.ndarray, float, int]:
    """Explicit Euler steps x += h r(x) with an adaptive pseudo-time step.

    A step may raise the residual norm, up to FLOW_GROWTH, so the flow can
    leave saddles. Growing steps shrink h.
    """
    r = residual(x)
    norm = float(np.linalg.norm(r))
    h = settings.damping * settings.step
    iterations = 0

    while norm >= settings.tol and iterations < settings.max_iter:
        iterations += 1
        trial = x + h * r
        r_trial = residual(trial)
        norm_trial = float(np.linalg.norm(r_trial))

        if not (np.isfinite(norm_trial) and norm_trial <= FLOW_GROWTH * norm):
            h *= 0.5

            if h < 1e-8 * settings.step:
                break

            continue

        if norm_trial < norm:
            h = min(1.25 * h, 10 * settings.step)
        else:
            h *= 0.7

        x, r, norm = trial, r_trial, norm_trial

    format_console(__name__).debug(
        f"Flow stopped after {iterations} steps at residual {norm:.3g}."
    )
    return x, norm, iterations


def _collapsed(
    candidate: np.ndarray, reference: np.ndarray, start: np.ndarray
) -> bool:
    scale = TRIVIAL_SCALE * np.linalg.norm(start)
    return bool(
        np.linalg.norm(candidate) < scale <= np.linalg.norm(reference)
    )


def _polish(
    residual: Residual,
    x: np.ndarray,
    norm: float,
    iterations: int,
    start: np.ndarray,
    settings: FixedPointSettings,
) -> Tuple[np.ndarray, float, int]:
    methods = (
        ("hybr", {"xtol": POLISH_XTOL, "maxfev": settings.max_iter}),
        ("anderson", {"maxiter": settings.max_iter, "fatol": settings.tol}),
    )

    for method, options in methods:
        if norm < settings.tol:
            break

        try:
            solution = root(residual, x, method=method, options=options)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            format_console(__name__).debug(f"Root polish {method} failed: {e}")
            continue

        candidate = np.asarray(solution.x, dtype=float)
        norm_candidate = float(np.linalg.norm(residual(candidate)))
        iterations += int(solution.get("nit", solution.get("nfev", 0)))

        if not (np.isfinite(norm_candidate) and norm_candidate < norm):
            continue

        if _collapsed(candidate, x, start):
            format_console(__name__).debug(
                f"Root polish {method} fell onto the trivial root, ignored."
            )
            continue

        x, norm = candidate, norm_candidate

    return x, norm, iterations
