"""Online SGD on two-layer networks and random-feature models."""

import json
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Tuple, Union

import numpy as np

from gmix.mixture import mean_overlaps, means, sample_batch
from gmix.taxonomies import Activation, DecayScaling
from gmix.tuples import (
    MixtureSpec,
    Observation,
    OrderParameters,
    RfModel,
    TrainConfig,
    TwoLayerNet,
)
from gmix.utils import activation, format_console, stream

TRAIN_STREAM = 0
EVAL_STREAM = 1
CHUNK = 1000
CONVERGENCE_FACTOR = 1.5
CONVERGENCE_SLACK = 0.0

Model = Union[TwoLayerNet, RfModel]
Observer = Callable[[Observation, Model], None]


class DivergenceError(Exception):
    pass


def init_2lnn(
    K: int,
    dim: int,
    sigma0: float,
    seed: int,
    act: str = Activation.RELU,
) -> TwoLayerNet:
    rng = np.random.default_rng(seed)
    return TwoLayerNet(
        sigma0 * rng.standard_normal((K, dim)),
        sigma0 * rng.standard_normal(K),
        act,
    )


def init_rf(
    P: int,
    dim: int,
    seed: int,
    act: str = Activation.RELU,
    feature_mean: Optional[np.ndarray] = None,
) -> RfModel:
    """Readout starts at zero; F has i.i.d. standard normal entries."""
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((P, dim))
    F.flags.writeable = False
    return RfModel(F, np.zeros(P), act, feature_mean)


def features(model: RfModel, X: np.ndarray) -> np.ndarray:
    psi, _ = activation(model.activation)
    Z = psi(X @ model.F.T / np.sqrt(model.F.shape[1]))

    if model.feature_mean is not None:
        Z -= model.feature_mean

    return Z


def predict(model: Model, X: np.ndarray) -> np.ndarray:
    if isinstance(model, RfModel):
        return features(model, X) @ model.w / np.sqrt(model.F.shape[0])

    g, _ = activation(model.activation)
    return g(X @ model.W.T / np.sqrt(model.W.shape[1])) @ model.v


def measure_errors(
    model: Model,
    spec: MixtureSpec,
    n_test: int = 10_000,
    seed: Union[int, np.random.Generator] = 0,
) -> Tuple[float, float]:
    """(pmse, ε_c) on freshly drawn samples; φ = 0 counts as half an error."""
    if n_test < 1:
        raise ValueError(f"n_test must be >= 1, got {n_test}.")

    rng = seed if isinstance(seed, np.random.Generator) else stream(seed)
    X, y, _ = sample_batch(spec, rng, n_test)
    phi = predict(model, X)
    pmse = float(np.mean(np.square(phi - y)))
    class_error = float(np.mean((y * phi < 0) + 0.5 * (phi == 0)))
    return pmse, class_error


def _evaluate(
    model: Model,
    spec: MixtureSpec,
    cfg: TrainConfig,
    step: int,
    observers: List[Observer],
) -> Observation:
    rng = stream(cfg.seed, EVAL_STREAM, step)
    pmse, class_error = measure_errors(model, spec, cfg.eval_set_size, rng)
    observation = Observation(step / spec.dim, pmse, class_error)
    format_console(__name__).debug(
        f"step={step} t={observation.t:g} pmse={pmse:.5f}"
        f" class_error={class_error:.5f}"
    )

    for observer in observers:
        observer(observation, model)

    return observation


def _is_checkpoint(step: int, cfg: TrainConfig) -> bool:
    return step % cfg.eval_every == 0 or step == cfg.steps


def train_2lnn(
    net: TwoLayerNet,
    spec: MixtureSpec,
    cfg: TrainConfig,
    observers: Iterable[Observer] = (),
) -> Tuple[List[Observation], TwoLayerNet]:
    """One fresh sample per step; both layers updated from pre-step weights."""
    K, dim = net.W.shape

    if dim != spec.dim:
        raise ValueError(f"Network has D={dim}, mixture has D={spec.dim}.")

    g, g_prime = activation(net.activation)
    W, v = net.W.copy(), net.v.copy()
    eta, kappa = cfg.lr, cfg.weight_decay
    sqrt_d = np.sqrt(dim)
    decay = kappa / sqrt_d if cfg.decay_scaling == DecayScaling.ODE else kappa
    rng = stream(cfg.seed, TRAIN_STREAM)
    observers = list(observers)
    trajectory = [_evaluate(net._replace(W=W, v=v), spec, cfg, 0, observers)]
    step = 0

    while step < cfg.steps:
        X, Y, _ = sample_batch(spec, rng, min(CHUNK, cfg.steps - step))

        for x, y in zip(X, Y):
            lam = W @ x / sqrt_d
            G, Gp = g(lam), g_prime(lam)
            delta = G @ v - y

            if not np.isfinite(delta):
                raise DivergenceError(f"Non-finite output at step {step}.")

            dW = -(eta / sqrt_d) * (np.outer(v * delta * Gp, x) + decay * W)
            dv = -(eta / dim) * (G * delta + kappa * v)
            W += dW
            v += dv
            step += 1

            if _is_checkpoint(step, cfg):
                if not (np.all(np.isfinite(W)) and np.all(np.isfinite(v))):
                    raise DivergenceError(
                        f"Non-finite weights at step {step}."
                    )

                trajectory.append(
                    _evaluate(
                        net._replace(W=W, v=v), spec, cfg, step, observers
                    )
                )

    format_console(__name__).info(
        f"Trained 2LNN (K={K}, D={dim}) for {cfg.steps} steps, final"
        f" class_error={trajectory[-1].class_error:.4f}."
    )
    return trajectory, net._replace(W=W, v=v)


def train_rf(
    model: RfModel,
    spec: MixtureSpec,
    cfg: TrainConfig,
    observers: Iterable[Observer] = (),
) -> Tuple[List[Observation], RfModel]:
    P, dim = model.F.shape

    if dim != spec.dim:
        raise ValueError(f"Model has D={dim}, mixture has D={spec.dim}.")

    w = model.w.copy()
    rate = cfg.lr / np.sqrt(P)
    sqrt_p = np.sqrt(P)
    rng = stream(cfg.seed, TRAIN_STREAM)
    observers = list(observers)
    trajectory = [_evaluate(model._replace(w=w), spec, cfg, 0, observers)]
    step = 0

    while step < cfg.steps:
        X, Y, _ = sample_batch(spec, rng, min(CHUNK, cfg.steps - step))
        Z = features(model, X)

        for z, y in zip(Z, Y):
            delta = z @ w / sqrt_p - y

            if not np.isfinite(delta):
                raise DivergenceError(f"Non-finite output at step {step}.")

            w -= rate * (z * delta + cfg.weight_decay * w)
            step += 1

            if _is_checkpoint(step, cfg):
                trajectory.append(
                    _evaluate(model._replace(w=w), spec, cfg, step, observers)
                )

    format_console(__name__).info(
        f"Trained RF (P={P}, D={dim}) for {cfg.steps} steps, final"
        f" class_error={trajectory[-1].class_error:.4f}."
    )
    return trajectory, model._replace(w=w)


def order_params_of(net: TwoLayerNet, spec: MixtureSpec) -> OrderParameters:
    W = net.W
    return OrderParameters(
        M=means(spec) @ W.T / spec.dim,
        Q=spec.covariance.apply(W) @ W.T / spec.dim,
        v=net.v.copy(),
        T=mean_overlaps(spec),
        chi=spec.covariance.chi,
    )


def dump_weights(model: Model, path: Path) -> Path:
    if isinstance(model, RfModel):
        document = {
            "activation": model.activation,
            "F": model.F.tolist(),
            "w": model.w.tolist(),
        }
    else:
        document = {
            "activation": model.activation,
            "W": model.W.tolist(),
            "v": model.v.tolist(),
        }

    path = Path(path)
    path.write_text(json.dumps(document))
    format_console(__name__).info(f'Wrote weights to "{path}".')
    return path


def converged(
    final_error: float,
    oracle: float,
    factor: float = CONVERGENCE_FACTOR,
    slack: float = CONVERGENCE_SLACK,
) -> bool:
    """A run counts as converged when it lands near the oracle error."""
    return bool(final_error <= factor * oracle + slack)
