"""Experiment configs, grid cells and the parallel sweep runner."""

import asyncio
import copy
import itertools
import json
import logging
import time
from asyncio import Semaphore
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Generator, List, Optional, Union

import numpy as np
import pandas as pd

from gmix.dynamics import (
    IntegrationDivergedError,
    integrate,
    state_from_weights,
)
from gmix.fixed_point import (
    ConvergenceError,
    oracle_error,
    solve_xor_fixed_point,
)
from gmix.formatters import (
    LOCK_FILE,
    PLOT_SPECS,
    RESULTS_FILE,
    SUMMARY_FILE,
    aggregate,
    emit_plot,
    results_frame,
    trajectory_frame,
    write_csv,
)
from gmix.mixture import (
    MixtureError,
    build_regime_mixture,
    build_three_cluster_mixture,
    build_xor_mixture,
    load_mixture,
    mean_overlaps,
)
from gmix.moments import DomainError, NumericalError
from gmix.rf_theory import (
    DegenerateVarianceError,
    RankError,
    feature_center,
    feature_moments,
    rf_asymptotics,
    scaling_variable,
)
from gmix.sgd import (
    CONVERGENCE_SLACK,
    DivergenceError,
    converged,
    init_2lnn,
    init_rf,
    train_2lnn,
    train_rf,
)
from gmix.taxonomies import (
    Activation,
    CellStatus,
    DecayScaling,
    ExperimentKind,
    MixtureBuilder,
    MomentKind,
    Recipe,
    Regime,
    VRule,
)
from gmix.tuples import (
    Cell,
    CellResult,
    ExperimentConfig,
    FixedPointResult,
    FixedPointSettings,
    MixtureSpec,
    Observation,
    OdeConfig,
    RfAsymptotics,
    RunRecord,
    TrainConfig,
)
from gmix.utils import config_hash, derive_seed, format_console, resolve_path

MIXTURE_KEYS = frozenset(
    {
        "builder",
        "dim",
        "sigma",
        "sigma2",
        "mu_norm",
        "mu_norm_second",
        "mu0",
        "mu0_second",
        "mu_over_sqrt_d",
        "snr",
        "regime",
        "path",
    }
)
RESERVED_AXES = frozenset({"replicate", "seed", "status", "error"})
SEPARATION_KEYS = {
    MixtureBuilder.XOR: ("mu_norm", "mu_over_sqrt_d", "snr", "regime"),
    MixtureBuilder.THREE_CLUSTER: ("mu0", "mu_over_sqrt_d", "snr", "regime"),
}
CELL_ERRORS = (
    DivergenceError,
    ConvergenceError,
    IntegrationDivergedError,
    NumericalError,
    DomainError,
    RankError,
    DegenerateVarianceError,
    MixtureError,
    FloatingPointError,
    np.linalg.LinAlgError,
)

_SGD = {
    "activation": Activation.RELU,
    "sigma0": 1.0,
    "eval_every": None,
    "eval_set_size": 10_000,
    "decay_scaling": DecayScaling.ODE,
}
_RF = {
    "activation": Activation.RELU,
    "moment_kind": MomentKind.RELU,
    "subleading": False,
    "dense_limit": 4000,
}
_FIXED_POINT = {
    "activation": Activation.RELU,
    "v_rule": VRule.REGRESSION,
    "quadrature_nodes": None,
    "mc_samples": 10_000,
    "tol": 1e-8,
    "max_iter": 2000,
    "damping": 0.5,
    "step": 10.0,
}

MODEL_DEFAULTS = {
    ExperimentKind.ODE_RUN: {
        **_SGD,
        "dt": 0.05,
        "mc_samples": 10_000,
        "record_every": 1.0,
        "n_bins": 100,
        "simulate": False,
        "wide": False,
    },
    ExperimentKind.SGD_2LNN: _SGD,
    ExperimentKind.SGD_RF: {
        **_RF,
        "eval_every": None,
        "eval_set_size": 10_000,
        "center": True,
        "analytic": True,
    },
    ExperimentKind.FIXED_POINT_SWEEP: _FIXED_POINT,
    ExperimentKind.RF_ASYMPTOTICS_SWEEP: _RF,
    ExperimentKind.MASTER_CURVE: {
        **_RF,
        "steps": None,
        "eval_set_size": 10_000,
    },
    ExperimentKind.SNR_COMPARISON: {**_FIXED_POINT, **_RF},
    ExperimentKind.OVERPARAM_SWEEP: {
        **_SGD,
        "converge_factor": 1.5,
        "converge_slack": CONVERGENCE_SLACK,
    },
    ExperimentKind.REGIME_COMPARISON: {**_SGD, **_RF},
}

# a tuple entry is satisfied by any one of its keys
REQUIRED_MODEL = {
    ExperimentKind.ODE_RUN: ("K", "lr", "weight_decay", "t_max"),
    ExperimentKind.SGD_2LNN: ("K", "lr", "weight_decay", "steps"),
    ExperimentKind.SGD_RF: ("lr", "weight_decay", "steps", ("P", "gamma")),
    ExperimentKind.FIXED_POINT_SWEEP: ("K", "lr", "weight_decay"),
    ExperimentKind.RF_ASYMPTOTICS_SWEEP: (("P", "gamma"),),
    ExperimentKind.MASTER_CURVE: (("P", "gamma"),),
    ExperimentKind.SNR_COMPARISON: (
        "K",
        "lr",
        "weight_decay",
        ("P", "gamma"),
    ),
    ExperimentKind.OVERPARAM_SWEEP: ("K", "lr", "weight_decay", "steps"),
    ExperimentKind.REGIME_COMPARISON: (
        "K",
        "lr",
        "weight_decay",
        "steps",
        ("P", "gamma"),
    ),
}

RECIPES: Dict[str, Dict[str, Any]] = {
    Recipe.FIG1: {
        "kind": ExperimentKind.SNR_COMPARISON,
        "recipe": Recipe.FIG1,
        "mixture": {
            "builder": MixtureBuilder.XOR,
            "dim": 1000,
            "sigma2": 0.05,
        },
        "model": {
            "K": 4,
            "lr": 0.1,
            "weight_decay": 1e-3,
            "gamma": 2,
            "quadrature_nodes": 30,
        },
        "grid": {
            "snr": [
                0.1,
                0.1778,
                0.3162,
                0.5623,
                1.0,
                1.7783,
                3.1623,
                5.6234,
                10.0,
            ]
        },
        "seeds": [0],
    },
    Recipe.FIG2: {
        "kind": ExperimentKind.ODE_RUN,
        "recipe": Recipe.FIG2,
        "mixture": {
            "builder": MixtureBuilder.XOR,
            "dim": 1000,
            "sigma": 0.05,
            "mu_over_sqrt_d": 1.0,
        },
        "model": {
            "K": 8,
            "lr": 0.1,
            "weight_decay": 1e-2,
            "sigma0": 1.0,
            "t_max": 1000.0,
            "dt": 0.1,
            "mc_samples": 2000,
            "record_every": 1.0,
            "simulate": True,
            "eval_set_size": 5000,
        },
        "grid": {},
        "seeds": [0],
    },
    Recipe.FIG3: {
        "kind": ExperimentKind.FIXED_POINT_SWEEP,
        "recipe": Recipe.FIG3,
        "mixture": {
            "builder": MixtureBuilder.XOR,
            "sigma2": 0.1,
            "mu_over_sqrt_d": 1.0,
        },
        "model": {
            "K": 4,
            "lr": 0.1,
            "quadrature_nodes": 30,
        },
        "grid": {"weight_decay": [1e-4, 1e-3, 1e-2, 1e-1, 1.0]},
        "seeds": [0, 1, 2],
    },
    Recipe.FIG4: {
        "kind": ExperimentKind.MASTER_CURVE,
        "recipe": Recipe.FIG4,
        "mixture": {"builder": MixtureBuilder.XOR, "mu_over_sqrt_d": 1.0},
        "model": {"moment_kind": MomentKind.RELU},
        "grid": {
            "dim": [200, 400, 800],
            "gamma": [1, 2, 4],
            "sigma": [0.05, 0.1, 0.2, 0.4],
        },
        "seeds": [0],
    },
    Recipe.FIG5: {
        "kind": ExperimentKind.REGIME_COMPARISON,
        "recipe": Recipe.FIG5,
        "mixture": {
            "builder": MixtureBuilder.XOR,
            "dim": 400,
            "sigma2": 0.05,
        },
        "model": {
            "K": 4,
            "lr": 0.05,
            "weight_decay": 1e-3,
            "steps": 200_000,
            "gamma": 2,
        },
        "grid": {"regime": [Regime.LOW, Regime.HIGH, Regime.MIXED]},
        "seeds": [0, 1, 2],
    },
    Recipe.FIG7: {
        "kind": ExperimentKind.REGIME_COMPARISON,
        "recipe": Recipe.FIG7,
        "mixture": {
            "builder": MixtureBuilder.THREE_CLUSTER,
            "dim": 400,
            "sigma2": 0.05,
        },
        "model": {
            "K": 4,
            "lr": 0.05,
            "weight_decay": 1e-3,
            "steps": 200_000,
            "gamma": 2,
        },
        "grid": {"regime": [Regime.LOW, Regime.HIGH, Regime.MIXED]},
        "seeds": [0, 1, 2],
    },
    Recipe.OVERPARAM: {
        "kind": ExperimentKind.OVERPARAM_SWEEP,
        "recipe": Recipe.OVERPARAM,
        "mixture": {
            "builder": MixtureBuilder.XOR,
            "dim": 800,
            "sigma2": 0.1,
            "mu_over_sqrt_d": 1.0,
        },
        "model": {"lr": 0.1, "weight_decay": 0.0, "steps": 100_000},
        "grid": {"K": [4, 6, 8, 12]},
        "seeds": list(range(20)),
    },
    Recipe.ODEVSIM: {
        "kind": ExperimentKind.ODE_RUN,
        "recipe": Recipe.ODEVSIM,
        "mixture": {
            "builder": MixtureBuilder.XOR,
            "dim": 500,
            "sigma": 0.2,
            "mu_over_sqrt_d": 1.0,
        },
        "model": {
            "K": 4,
            "lr": 0.1,
            "weight_decay": 1e-2,
            "t_max": 50.0,
            "dt": 0.1,
            "mc_samples": 4000,
            "simulate": True,
            "eval_set_size": 5000,
        },
        "grid": {},
        "seeds": [0],
    },
}


class ConfigError(Exception):
    pass


def _require(condition: bool, path: str, message: str):
    if not condition:
        raise ConfigError(f"{path}: {message}")


def recipe_config(name: str) -> Dict[str, Any]:
    _require(
        name in RECIPES, "recipe", f"unknown recipe {name!r}, expected one"
        f" of {sorted(RECIPES)}"
    )
    return copy.deepcopy(RECIPES[name])


def load_config(source: Union[str, Path]) -> Dict[str, Any]:
    """A recipe name or the path of a JSON document."""
    if str(source) in RECIPES:
        return recipe_config(str(source))

    try:
        with Path(source).open(encoding="utf-8") as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError(f'Could not read config "{source}": {e}') from e


def _present(key: Union[str, tuple], section: dict, grid: dict) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return any(k in section or k in grid for k in keys)


def _check_mixture(kind: str, mixture: dict, grid: dict):
    for key in mixture:
        _require(key in MIXTURE_KEYS, f"mixture.{key}", "unknown parameter")

    builder = mixture.get("builder")
    _require(
        builder in (*SEPARATION_KEYS, MixtureBuilder.FILE),
        "mixture.builder",
        f"expected one of {sorted([*SEPARATION_KEYS, MixtureBuilder.FILE])},"
        f" got {builder!r}",
    )

    if builder == MixtureBuilder.FILE:
        _require("path" in mixture, "mixture.path", "required for files")
        return

    if kind == ExperimentKind.FIXED_POINT_SWEEP:
        _require(
            builder == MixtureBuilder.XOR,
            "mixture.builder",
            "the fixed-point solver needs the XOR mixture",
        )
    else:
        _require(_present("dim", mixture, grid), "mixture.dim", "required")

    _require(
        _present(("sigma2", "sigma"), mixture, grid),
        "mixture.sigma2",
        "noise level must be explicit (sigma2 or sigma)",
    )
    _require(
        _present(SEPARATION_KEYS[builder], mixture, grid),
        f"mixture.{SEPARATION_KEYS[builder][0]}",
        "mean separation must be explicit (one of"
        f" {list(SEPARATION_KEYS[builder])})",
    )


def _check_model(kind: str, model: dict, grid: dict):
    known = set(MODEL_DEFAULTS[kind])

    for required in REQUIRED_MODEL[kind]:
        keys = required if isinstance(required, tuple) else (required,)
        known.update(keys)
        _require(
            _present(required, model, grid),
            f"model.{keys[0]}",
            f"required (one of {list(keys)})"
            if len(keys) > 1
            else "required",
        )

    if kind == ExperimentKind.MASTER_CURVE:
        known.update(("lr", "weight_decay"))

        if model.get("steps") is not None:
            for key in ("lr", "weight_decay"):
                _require(
                    _present(key, model, grid),
                    f"model.{key}",
                    "required when simulating",
                )

    for key in model:
        _require(key in known, f"model.{key}", "unknown parameter")

    for axis in grid:
        _require(
            axis in known or axis in MIXTURE_KEYS,
            f"grid.{axis}",
            "unknown parameter",
        )


def parse_config(document: Any) -> ExperimentConfig:
    """Validate a config document and fill in non-physics defaults."""
    _require(isinstance(document, dict), "<root>", "expected an object")
    kind = document.get("kind")
    _require(
        kind in MODEL_DEFAULTS,
        "kind",
        f"expected one of {sorted(MODEL_DEFAULTS)}, got {kind!r}",
    )

    for section in ("mixture", "model", "grid"):
        _require(
            isinstance(document.get(section, {}), dict),
            section,
            "expected an object",
        )

    mixture = dict(document.get("mixture", {}))
    model = dict(document.get("model", {}))
    grid = dict(document.get("grid", {}))

    for axis, values in grid.items():
        _require(axis not in RESERVED_AXES, f"grid.{axis}", "reserved name")
        _require(
            isinstance(values, list) and len(values) > 0,
            f"grid.{axis}",
            "axis must be a non-empty list",
        )

    seeds = document.get("seeds")
    _require(
        isinstance(seeds, list)
        and len(seeds) > 0
        and all(isinstance(s, int) and not isinstance(s, bool) for s in seeds),
        "seeds",
        "an explicit non-empty list of integers is required",
    )
    master_seed = document.get("master_seed", 0)
    _require(
        isinstance(master_seed, int) and not isinstance(master_seed, bool),
        "master_seed",
        "expected an integer",
    )
    recipe = document.get("recipe")
    _require(
        recipe is None or recipe in PLOT_SPECS,
        "recipe",
        f"expected one of {sorted(PLOT_SPECS)}, got {recipe!r}",
    )

    _check_mixture(kind, mixture, grid)
    _check_model(kind, model, grid)

    return ExperimentConfig(
        kind=kind,
        mixture=mixture,
        model={**MODEL_DEFAULTS[kind], **model},
        grid=grid,
        seeds=list(seeds),
        master_seed=master_seed,
        output=document.get("output"),
        recipe=recipe,
    )


def resolved_document(config: ExperimentConfig) -> Dict[str, Any]:
    return dict(config._asdict())


def build_cells(config: ExperimentConfig) -> List[Cell]:
    """Cartesian product of the sorted grid axes times the seeds."""
    axes = sorted(config.grid)
    cells = []

    for values in itertools.product(*(config.grid[a] for a in axes)):
        point = dict(zip(axes, values))
        mixture = {
            **config.mixture,
            **{k: v for k, v in point.items() if k in MIXTURE_KEYS},
        }
        model = {
            **config.model,
            **{k: v for k, v in point.items() if k not in MIXTURE_KEYS},
        }

        for replicate in config.seeds:
            coords = {**point, "replicate": replicate}
            cells.append(
                Cell(
                    index=len(cells),
                    kind=config.kind,
                    mixture=mixture,
                    model=model,
                    coords=coords,
                    seed=derive_seed(config.master_seed, coords),
                )
            )

    return cells


def _sigma2(mixture: dict) -> float:
    if "sigma2" in mixture:
        return float(mixture["sigma2"])

    return float(mixture["sigma"]) ** 2


def separation(mixture: dict) -> float:
    """|μ|/√D of the first mean."""
    if "mu_over_sqrt_d" in mixture:
        return float(mixture["mu_over_sqrt_d"])

    if "snr" in mixture:
        return float(mixture["snr"]) * np.sqrt(_sigma2(mixture))

    three = mixture["builder"] == MixtureBuilder.THREE_CLUSTER
    key = "mu0" if three else "mu_norm"
    return float(mixture[key]) / np.sqrt(float(mixture["dim"]))


def build_mixture(mixture: dict) -> MixtureSpec:
    builder = mixture["builder"]

    if builder == MixtureBuilder.FILE:
        return load_mixture(Path(mixture["path"]))

    dim, sigma2 = int(mixture["dim"]), _sigma2(mixture)

    if "regime" in mixture:
        return build_regime_mixture(builder, dim, sigma2, mixture["regime"])

    norm = separation(mixture) * np.sqrt(dim)

    if builder == MixtureBuilder.XOR:
        return build_xor_mixture(
            dim, norm, sigma2, mixture.get("mu_norm_second")
        )

    return build_three_cluster_mixture(
        dim, norm, sigma2, mixture.get("mu0_second")
    )


def _oracle(mixture: dict, spec: MixtureSpec) -> float:
    """Nearest-mean error of a symmetric XOR mixture, nan otherwise."""
    if mixture["builder"] != MixtureBuilder.XOR:
        return float("nan")

    T = mean_overlaps(spec)

    if not np.isclose(T[0, 0], T[2, 2]):
        return float("nan")

    return oracle_error(np.sqrt(T[0, 0]), np.sqrt(_sigma2(mixture)))


def _rf_size(model: dict, dim: int) -> int:
    if model.get("P") is not None:
        P = int(model["P"])
    else:
        P = int(round(float(model["gamma"]) * dim))

    if P < 1:
        raise DomainError(f"The RF model needs P >= 1, got {P}.")

    return P


def _train_config(
    model: dict, dim: int, seed: int, steps: Optional[int] = None
) -> TrainConfig:
    steps = int(model["steps"]) if steps is None else steps
    return TrainConfig(
        lr=float(model["lr"]),
        weight_decay=float(model["weight_decay"]),
        steps=steps,
        eval_every=int(model.get("eval_every") or dim),
        eval_set_size=int(model["eval_set_size"]),
        seed=seed,
        decay_scaling=model.get("decay_scaling", DecayScaling.ODE),
    )


def _observation_rows(
    observations: List[Observation], **extra: Any
) -> List[Dict[str, Any]]:
    return [
        {**extra, "t": o.t, "pmse": o.pmse, "class_error": o.class_error}
        for o in observations
    ]


def _rf_analytic(
    spec: MixtureSpec, model: dict, seed: int
) -> RfAsymptotics:
    P = _rf_size(model, spec.dim)
    rf = init_rf(P, spec.dim, seed, model["activation"])
    return rf_asymptotics(
        spec,
        rf.F,
        model["moment_kind"],
        model["activation"],
        bool(model["subleading"]),
        int(model["dense_limit"]),
    )


def _fixed_point(cell: Cell) -> FixedPointResult:
    model = cell.model
    nodes = model.get("quadrature_nodes")
    settings = FixedPointSettings(
        activation=model["activation"],
        mc_samples=int(model["mc_samples"]),
        seed=cell.seed,
        quadrature_nodes=int(nodes) if nodes else None,
        tol=float(model["tol"]),
        max_iter=int(model["max_iter"]),
        damping=float(model["damping"]),
        step=float(model["step"]),
        v_rule=model["v_rule"],
        mu_over_sqrt_d=separation(cell.mixture),
    )
    result = solve_xor_fixed_point(
        int(model["K"]),
        np.sqrt(_sigma2(cell.mixture)),
        float(model["lr"]),
        float(model["weight_decay"]),
        settings,
        init=cell.seed,
    )

    if not result.converged:
        raise ConvergenceError(
            f"Fixed point residual {result.residual_norm:.3g} is above"
            f" tol={settings.tol:g} after {result.iterations} iterations."
        )

    return result


def _run_ode(cell: Cell) -> List[Dict[str, Any]]:
    spec, model = build_mixture(cell.mixture), cell.model
    net = init_2lnn(
        int(model["K"]),
        spec.dim,
        float(model["sigma0"]),
        cell.seed,
        model["activation"],
    )
    cfg = OdeConfig(
        lr=float(model["lr"]),
        weight_decay=float(model["weight_decay"]),
        activation=model["activation"],
        dt=float(model["dt"]),
        mc_samples=int(model["mc_samples"]),
        seed=cell.seed,
    )
    t_max, record_every = float(model["t_max"]), float(model["record_every"])
    state = state_from_weights(spec, net.W, net.v, n_bins=int(model["n_bins"]))
    points = integrate(
        state,
        spec,
        cfg,
        t_max,
        record_every=record_every,
        keep_states=bool(model["wide"]),
    )
    frame = trajectory_frame(points, wide=bool(model["wide"]))
    rows = [{"source": "ode", **row} for row in frame.to_dict("records")]

    if model["simulate"]:
        every = max(1, int(round(record_every * spec.dim)))
        train = _train_config(
            {**model, "eval_every": every},
            spec.dim,
            cell.seed,
            steps=int(round(t_max * spec.dim)),
        )
        observations, _ = train_2lnn(net, spec, train)
        rows += _observation_rows(observations, source="sgd")

    return rows


def _run_sgd_2lnn(cell: Cell) -> List[Dict[str, Any]]:
    spec, model = build_mixture(cell.mixture), cell.model
    net = init_2lnn(
        int(model["K"]),
        spec.dim,
        float(model["sigma0"]),
        cell.seed,
        model["activation"],
    )
    observations, _ = train_2lnn(
        net, spec, _train_config(model, spec.dim, cell.seed)
    )
    return _observation_rows(
        observations, oracle=_oracle(cell.mixture, spec)
    )


def _run_overparam(cell: Cell) -> List[Dict[str, Any]]:
    spec, model = build_mixture(cell.mixture), cell.model
    steps = int(model["steps"])
    net = init_2lnn(
        int(model["K"]),
        spec.dim,
        float(model["sigma0"]),
        cell.seed,
        model["activation"],
    )
    observations, _ = train_2lnn(
        net,
        spec,
        _train_config({**model, "eval_every": steps}, spec.dim, cell.seed),
    )
    final, oracle = observations[-1], _oracle(cell.mixture, spec)
    return [
        {
            "pmse": final.pmse,
            "class_error": final.class_error,
            "oracle": oracle,
            "converged": converged(
                final.class_error,
                oracle,
                float(model["converge_factor"]),
                float(model["converge_slack"]),
            ),
        }
    ]


def _run_sgd_rf(cell: Cell) -> List[Dict[str, Any]]:
    spec, model = build_mixture(cell.mixture), cell.model
    P = _rf_size(model, spec.dim)
    rf = init_rf(P, spec.dim, cell.seed, model["activation"])
    extra: Dict[str, Any] = {"P": P}

    if model["center"]:
        moments = feature_moments(
            spec,
            rf.F,
            model["moment_kind"],
            model["activation"],
            bool(model["subleading"]),
        )
        rf = rf._replace(feature_mean=feature_center(moments, spec))

    if model["analytic"]:
        asym = _rf_analytic(spec, model, cell.seed)
        extra["pmse_analytic"] = 2 * asym.pmse_inf
        extra["class_error_analytic"] = asym.class_error_inf

    observations, _ = train_rf(
        rf, spec, _train_config(model, spec.dim, cell.seed)
    )
    return _observation_rows(observations, **extra)


def _rf_row(spec: MixtureSpec, cell: Cell) -> Dict[str, Any]:
    asym = _rf_analytic(spec, cell.model, cell.seed)
    P = _rf_size(cell.model, spec.dim)
    sigma = float(cell.mixture.get("sigma", np.sqrt(_sigma2(cell.mixture))))
    return {
        "dim": spec.dim,
        "P": P,
        "gamma": cell.model.get("gamma") or P / spec.dim,
        "sigma": sigma,
        "scaling_var": scaling_variable(sigma, spec.dim, P),
        "pmse_inf": asym.pmse_inf,
        "class_error_analytic": asym.class_error_inf,
    }


def _run_rf_asymptotics(cell: Cell) -> List[Dict[str, Any]]:
    return [_rf_row(build_mixture(cell.mixture), cell)]


def _run_master_curve(cell: Cell) -> List[Dict[str, Any]]:
    spec, model = build_mixture(cell.mixture), cell.model
    row = _rf_row(spec, cell)

    if model.get("steps") is not None:
        rf = init_rf(row["P"], spec.dim, cell.seed, model["activation"])
        moments = feature_moments(
            spec,
            rf.F,
            model["moment_kind"],
            model["activation"],
            bool(model["subleading"]),
        )
        rf = rf._replace(feature_mean=feature_center(moments, spec))
        steps = int(model["steps"])
        observations, _ = train_rf(
            rf,
            spec,
            _train_config({**model, "eval_every": steps}, spec.dim, cell.seed),
        )
        row["class_error_sim"] = observations[-1].class_error

    return [row]


def _run_fixed_point(cell: Cell) -> List[Dict[str, Any]]:
    result = _fixed_point(cell)
    sep, sigma2 = separation(cell.mixture), _sigma2(cell.mixture)
    return [
        {
            "pmse": result.pmse,
            "class_error": result.class_error,
            "residual_norm": result.residual_norm,
            "converged": result.converged,
            "iterations": result.iterations,
            "oracle": oracle_error(sep, np.sqrt(sigma2)),
        }
    ]


def _run_snr_comparison(cell: Cell) -> List[Dict[str, Any]]:
    spec = build_mixture(cell.mixture)
    result = _fixed_point(cell)
    rf = _rf_analytic(spec, cell.model, cell.seed)
    sep, sigma = separation(cell.mixture), np.sqrt(_sigma2(cell.mixture))
    return [
        {
            "snr": cell.mixture.get("snr", sep / sigma),
            "oracle": oracle_error(sep, sigma),
            "pmse_2lnn": result.pmse,
            "class_error_2lnn": result.class_error,
            "converged_2lnn": result.converged,
            "pmse_rf": 2 * rf.pmse_inf,
            "class_error_rf": rf.class_error_inf,
        }
    ]


def _run_regime_comparison(cell: Cell) -> List[Dict[str, Any]]:
    spec, model = build_mixture(cell.mixture), cell.model
    steps = int(model["steps"])
    net = init_2lnn(
        int(model["K"]),
        spec.dim,
        float(model["sigma0"]),
        cell.seed,
        model["activation"],
    )
    observations, _ = train_2lnn(
        net,
        spec,
        _train_config({**model, "eval_every": steps}, spec.dim, cell.seed),
    )
    rf = _rf_analytic(spec, model, cell.seed)
    regime = cell.mixture.get("regime", "")
    return [
        {
            "regime": regime,
            "model": "2lnn",
            "pmse": observations[-1].pmse,
            "class_error": observations[-1].class_error,
        },
        {
            "regime": regime,
            "model": "rf",
            "pmse": 2 * rf.pmse_inf,
            "class_error": rf.class_error_inf,
        },
    ]


RUNNERS: Dict[str, Callable[[Cell], List[Dict[str, Any]]]] = {
    ExperimentKind.ODE_RUN: _run_ode,
    ExperimentKind.SGD_2LNN: _run_sgd_2lnn,
    ExperimentKind.SGD_RF: _run_sgd_rf,
    ExperimentKind.FIXED_POINT_SWEEP: _run_fixed_point,
    ExperimentKind.RF_ASYMPTOTICS_SWEEP: _run_rf_asymptotics,
    ExperimentKind.MASTER_CURVE: _run_master_curve,
    ExperimentKind.SNR_COMPARISON: _run_snr_comparison,
    ExperimentKind.OVERPARAM_SWEEP: _run_overparam,
    ExperimentKind.REGIME_COMPARISON: _run_regime_comparison,
}


def run_cell(cell: Cell) -> CellResult:
    """Run one grid cell; numerical failures are recorded, not raised."""
    start = time.perf_counter()

    try:
        rows = RUNNERS[cell.kind](cell)
    except CELL_ERRORS as e:
        format_console(__name__).error(
            f"Cell {cell.index} failed. Error: ({type(e).__name__}) {e}"
        )
        return CellResult(
            cell.index,
            cell.coords,
            cell.seed,
            CellStatus.FAILED,
            [],
            f"({type(e).__name__}) {e}",
            time.perf_counter() - start,
        )

    return CellResult(
        cell.index,
        cell.coords,
        cell.seed,
        CellStatus.OK,
        rows,
        None,
        time.perf_counter() - start,
    )


async def _async_run_cell(
    cell: Cell, semaphore: Semaphore, executor: ProcessPoolExecutor
) -> CellResult:
    async with semaphore:
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(executor, run_cell, cell)


async def async_run_cells(cells: List[Cell], jobs: int) -> List[CellResult]:
    semaphore = Semaphore(jobs)

    with ProcessPoolExecutor(max_workers=jobs) as executor:
        tasks = [_async_run_cell(cell, semaphore, executor) for cell in cells]
        return await asyncio.gather(*tasks)


def run_cells(cells: List[Cell], jobs: int = 1) -> List[CellResult]:
    """Results come back in cell order whatever the parallelism."""
    if jobs <= 1 or len(cells) <= 1:
        return [run_cell(cell) for cell in cells]

    return list(asyncio.run(async_run_cells(cells, jobs)))


class ExperimentRunner:
    def __init__(self, jobs: int = 1, chunk: Optional[int] = None):
        self.jobs = max(1, jobs)
        self.chunk = chunk or 4 * self.jobs
        self.record: Optional[RunRecord] = None

    def __enter__(self):
        logging.getLogger("matplotlib").setLevel(logging.WARNING)
        logging.getLogger("asyncio").setLevel(logging.CRITICAL + 1)

        return self

    def __exit__(self, type, value, traceback):
        pass

    def _write(
        self,
        config: ExperimentConfig,
        document: Dict[str, Any],
        results: List[CellResult],
        path: Path,
        wall_time: float,
    ) -> RunRecord:
        frame = results_frame(results, config.grid)
        write_csv(frame, path / RESULTS_FILE)
        write_csv(aggregate(frame, config.grid), path / SUMMARY_FILE)
        (path / LOCK_FILE).write_text(
            json.dumps(document, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

        n_failed = sum(r.status == CellStatus.FAILED for r in results)

        if config.recipe and n_failed == len(results):
            format_console(__name__).warning(
                f"Every cell failed, skipping the {config.recipe} plot."
            )
        elif config.recipe:
            emit_plot(path / RESULTS_FILE, config.recipe)

        format_console(__name__).info(
            f'Wrote {len(frame)} rows to "{path}" ({n_failed} failed cells).'
        )
        return RunRecord(
            config_hash(document),
            config.master_seed,
            frame.to_dict("records"),
            wall_time,
        )

    def execute(
        self, config: ExperimentConfig, path: Optional[Path] = None
    ) -> Generator[List[CellResult], None, None]:
        """Yield chunks of finished cells, then write the artifacts."""
        path = resolve_path(Path(path) if path else None)
        document = resolved_document(config)
        cells = build_cells(config)
        start = time.perf_counter()
        results = []

        format_console(__name__).info(
            f"Running {len(cells)} cells of {config.kind}"
            f" ({config_hash(document)[:12]}) with {self.jobs} jobs."
        )

        for i in range(0, len(cells), self.chunk):
            chunk = run_cells(cells[i : i + self.chunk], self.jobs)
            results.extend(chunk)
            yield chunk

        self.record = self._write(
            config, document, results, path, time.perf_counter() - start
        )

    def run(
        self, config: ExperimentConfig, path: Optional[Path] = None
    ) -> RunRecord:
        for _ in self.execute(config, path):
            pass

        return self.record


def sweep(
    config: ExperimentConfig, path: Optional[Path] = None, jobs: int = 1
) -> pd.DataFrame:
    """Run the grid and return the per-point aggregate."""
    with ExperimentRunner(jobs) as runner:
        record = runner.run(config, path)

    return aggregate(pd.DataFrame(record.rows), config.grid)
