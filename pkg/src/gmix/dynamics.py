"""Order-parameter equations of motion for a 2LNN trained by online SGD.

The state stores, per spectrum bin b of the shared covariance Ω,

    m^{αk}_b = mean_{τ∈b} w̃^k_τ μ̃^α_τ,   q^{kl}_b = mean_{τ∈b} w̃^k_τ w̃^l_τ

in an orthonormal eigenbasis of Ω, so that M = Σ_b p_b m_b and
Q = Σ_b p_b ρ_b q_b. Expectations against a single input coordinate use
the Gaussian regression of x̃_τ on the local fields,

    E[F(λ) x̃_τ] = E[F] μ̃_τ/√D + ρ_τ w̃_τ·Q⁺ E[(λ - M) F] / √D,

which is exact for jointly Gaussian variables.
"""

from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from gmix.mixture import mean_overlaps, means
from gmix.moments import (
    NumericalError,
    expect,
    factorize,
    integral_table,
    local_fields,
    standard_draws,
)
from gmix.taxonomies import CovarianceKind
from gmix.tuples import (
    GaussianDraws,
    MixtureSpec,
    OdeConfig,
    OrderParameterState,
    SpectrumGrid,
    TrajectoryPoint,
)
from gmix.utils import activation, format_console, stream

DEFAULT_BINS = 100
STEP_STREAM = 0
READOUT_STREAM = 1


class IntegrationDivergedError(Exception):
    pass


def spectrum_grid(
    spec: MixtureSpec, n_bins: int = DEFAULT_BINS
) -> Tuple[SpectrumGrid, List[np.ndarray]]:
    """Equal-mass bins over the eigenvalues of Ω, with member indices."""
    cov = spec.covariance

    if cov.kind == CovarianceKind.ISOTROPIC:
        grid = SpectrumGrid(np.array([cov.sigma2]), np.array([1.0]))
        return grid, [np.arange(spec.dim)]

    values, _ = cov.spectrum
    bins = np.array_split(np.arange(spec.dim), min(n_bins, spec.dim))
    grid = SpectrumGrid(
        np.array([values[b].mean() for b in bins]),
        np.array([len(b) / spec.dim for b in bins]),
    )
    return grid, bins


def state_from_weights(
    spec: MixtureSpec,
    W: np.ndarray,
    v: np.ndarray,
    t: float = 0.0,
    n_bins: int = DEFAULT_BINS,
) -> OrderParameterState:
    grid, bins = spectrum_grid(spec, n_bins)
    mu = means(spec)

    if spec.covariance.kind != CovarianceKind.ISOTROPIC:
        _, vectors = spec.covariance.spectrum
        W, mu = W @ vectors, mu @ vectors

    m = np.stack([mu[:, b] @ W[:, b].T / len(b) for b in bins], axis=-1)
    q = np.stack([W[:, b] @ W[:, b].T / len(b) for b in bins], axis=-1)
    q = 0.5 * (q + q.transpose(1, 0, 2))
    T_density = np.stack(
        [mu[:, b] @ mu[:, b].T / len(b) for b in bins], axis=-1
    )

    return OrderParameterState(
        m=m,
        q=q,
        v=np.array(v, dtype=float),
        T=mean_overlaps(spec),
        chi=spec.covariance.chi,
        t=t,
        spectrum=grid,
        T_density=T_density,
    )


def init_state(
    spec: MixtureSpec,
    K: int,
    sigma0: float,
    seed: int,
    n_bins: int = DEFAULT_BINS,
) -> OrderParameterState:
    """Order parameters of i.i.d. N(0, σ0²) weights drawn at dimension D."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}.")

    rng = np.random.default_rng(seed)
    W = sigma0 * rng.standard_normal((K, spec.dim))
    v = sigma0 * rng.standard_normal(K)
    return state_from_weights(spec, W, v, n_bins=n_bins)


def order_parameters(
    state: OrderParameterState,
) -> Tuple[np.ndarray, np.ndarray]:
    rho, p = state.spectrum
    M = np.einsum("akb,b->ak", state.m, p)
    Q = np.einsum("klb,b->kl", state.q, p * rho)
    return M, Q


def _factorize(Q: np.ndarray, t: float) -> np.ndarray:
    try:
        return factorize(Q)
    except NumericalError as e:
        raise IntegrationDivergedError(f"At t={t:g}: {e}") from e


def vector_field(
    state: OrderParameterState,
    spec: MixtureSpec,
    cfg: OdeConfig,
    draws: GaussianDraws,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Time derivatives (dm, dq, dv) of the state."""
    eta, kappa = cfg.lr, cfg.weight_decay
    m, q, v = state.m, state.q, state.v
    rho = state.spectrum.eigenvalues
    M, Q = order_parameters(state)
    factor = _factorize(Q, state.t)
    factor_inv = np.linalg.pinv(factor)
    Q_inv = factor_inv.T @ factor_inv

    dm, dq, dv = np.zeros_like(m), np.zeros_like(q), np.zeros_like(v)

    for alpha, cluster in enumerate(spec.clusters):
        y, weight = cluster.label, cluster.weight
        table = integral_table(M[alpha], factor, draws, cfg.activation)

        # F_k = g'(λ^k)(φ - y): its mean and its regression on the fields
        mean_f = table.I22 @ v - y * table.I31
        centred = (
            table.I3 @ v - y * table.I32 - np.outer(mean_f, M[alpha])
        )
        R = centred @ Q_inv
        coef = -weight * eta * v

        dm += coef[None, :, None] * (
            mean_f[None, :, None] * state.T_density[alpha][:, None, :]
            + rho * np.einsum("kl,blr->bkr", R, m)
        )

        X = coef[:, None, None] * (
            mean_f[:, None, None] * m[alpha][None, :, :]
            + rho * np.einsum("kj,jlr->klr", R, q)
        )
        dq += X + X.transpose(1, 0, 2)

        noise = (
            table.I42
            - 2 * y * table.I43 @ v
            + np.einsum("klja,j,a->kl", table.I4, v, v)
        )
        dq += weight * eta**2 * rho * (np.outer(v, v) * noise)[:, :, None]

        dv += weight * eta * (y * table.I1 - table.I2 @ v)

    dm -= eta * kappa * m
    dq -= 2 * eta * kappa * q
    dv -= eta * kappa * v

    return dm, 0.5 * (dq + dq.transpose(1, 0, 2)), dv


def step_draws(state: OrderParameterState, cfg: OdeConfig) -> GaussianDraws:
    step = int(round(state.t / cfg.dt))
    K = state.v.shape[0]
    return standard_draws(
        stream(cfg.seed, STEP_STREAM, step), cfg.mc_samples, K
    )


def eom_step(
    state: OrderParameterState,
    spec: MixtureSpec,
    cfg: OdeConfig,
    draws: Optional[GaussianDraws] = None,
) -> OrderParameterState:
    """One explicit Euler step of length cfg.dt."""
    draws = draws if draws is not None else step_draws(state, cfg)
    dm, dq, dv = vector_field(state, spec, cfg, draws)
    dt = cfg.dt

    new = state._replace(
        m=state.m + dt * dm,
        q=state.q + dt * dq,
        v=state.v + dt * dv,
        t=state.t + dt,
    )

    if not (
        np.all(np.isfinite(new.m))
        and np.all(np.isfinite(new.q))
        and np.all(np.isfinite(new.v))
    ):
        raise IntegrationDivergedError(
            f"Non-finite order parameters at t={new.t:g}."
        )

    return new


def readout_draws(state: OrderParameterState, cfg: OdeConfig) -> GaussianDraws:
    return standard_draws(
        stream(cfg.seed, READOUT_STREAM), cfg.mc_samples, state.v.shape[0]
    )


def _output_expectation(
    state: OrderParameterState,
    spec: MixtureSpec,
    cfg: OdeConfig,
    func: Callable[[np.ndarray, int], np.ndarray],
    draws: Optional[GaussianDraws],
) -> float:
    g, _ = activation(cfg.activation)
    draws = draws if draws is not None else readout_draws(state, cfg)
    M, Q = order_parameters(state)
    factor = _factorize(Q, state.t)
    total = 0.0

    for alpha, cluster in enumerate(spec.clusters):
        phi = g(local_fields(M[alpha], factor, draws)) @ state.v
        values = func(phi, cluster.label)
        total += cluster.weight * float(expect(values, draws))

    return total


def pmse_from_state(
    state: OrderParameterState,
    spec: MixtureSpec,
    cfg: OdeConfig,
    draws: Optional[GaussianDraws] = None,
) -> float:
    return _output_expectation(
        state, spec, cfg, lambda phi, y: np.square(phi - y), draws
    )


def class_error_from_state(
    state: OrderParameterState,
    spec: MixtureSpec,
    cfg: OdeConfig,
    draws: Optional[GaussianDraws] = None,
) -> float:
    return _output_expectation(
        state,
        spec,
        cfg,
        lambda phi, y: (y * phi < 0) + 0.5 * (phi == 0),
        draws,
    )


def integrate(
    state: OrderParameterState,
    spec: MixtureSpec,
    cfg: OdeConfig,
    t_max: float,
    observers: Iterable[Callable[[TrajectoryPoint], None]] = (),
    times: Optional[Sequence[float]] = None,
    record_every: float = 1.0,
    keep_states: bool = False,
) -> List[TrajectoryPoint]:
    """Euler-integrate up to t_max, recording errors along the way.

    Without `times`, the initial point and every `record_every` time units
    are recorded. With `times`, only the first step reaching each listed
    time is recorded, and its state is kept.
    """
    if cfg.dt <= 0:
        raise ValueError(f"dt must be positive, got {cfg.dt}.")

    t0 = state.t

    if t_max <= t0:
        return []

    n_steps = int(np.ceil((t_max - t0) / cfg.dt - 1e-9))

    if times is None:
        every = max(1, int(round(record_every / cfg.dt)))
        checkpoints = set(range(0, n_steps + 1, every)) | {n_steps}
        keep = keep_states
    else:
        checkpoints = {
            int(np.ceil((tau - t0) / cfg.dt - 1e-9))
            for tau in times
            if t0 <= tau <= t_max
        }
        keep = True

    observers = list(observers)
    trajectory = []

    format_console(__name__).info(
        f"Integrating {n_steps} steps (dt={cfg.dt:g}) from t={t0:g} to"
        f" t={t_max:g}."
    )

    for step in range(n_steps + 1):
        if step > 0:
            state = eom_step(state, spec, cfg)._replace(t=t0 + step * cfg.dt)

        if step in checkpoints:
            point = TrajectoryPoint(
                state.t,
                pmse_from_state(state, spec, cfg),
                class_error_from_state(state, spec, cfg),
                state if keep else None,
            )
            trajectory.append(point)
            format_console(__name__).debug(
                f"t={point.t:g} pmse={point.pmse:.5f}"
                f" class_error={point.class_error:.5f}"
            )

            for observer in observers:
                observer(point)

    return trajectory
