import json
from functools import partial
from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional

import numpy as np

from gmix.mixture import build_xor_mixture
from gmix.taxonomies import Activation, ExperimentKind, MixtureBuilder
from gmix.tuples import (
    FixedPointSettings,
    MixtureSpec,
    OdeConfig,
    TrainConfig,
)


class XorParams(NamedTuple):
    dim: int
    mu_over_sqrt_d: float
    sigma2: float
    mu_second: Optional[float] = None


def xor(params: XorParams) -> MixtureSpec:
    norm = params.mu_over_sqrt_d * np.sqrt(params.dim)
    second = (
        None
        if params.mu_second is None
        else params.mu_second * np.sqrt(params.dim)
    )
    return build_xor_mixture(params.dim, norm, params.sigma2, second)


SmallXor = partial(XorParams, dim=20, mu_over_sqrt_d=1.0, sigma2=0.05)
WideXor = partial(XorParams, dim=200, mu_over_sqrt_d=1.0, sigma2=0.05)

QuickTrain = partial(
    TrainConfig,
    lr=0.1,
    weight_decay=0.0,
    steps=200,
    eval_every=100,
    eval_set_size=2000,
    seed=0,
)
QuickOde = partial(
    OdeConfig,
    lr=0.1,
    weight_decay=0.0,
    activation=Activation.RELU,
    dt=0.1,
    mc_samples=500,
    seed=0,
)
QuadratureSolve = partial(
    FixedPointSettings,
    quadrature_nodes=20,
    tol=1e-6,
    max_iter=300,
)


class Document(NamedTuple):
    kind: str
    mixture: Dict[str, Any]
    model: Dict[str, Any]
    grid: Dict[str, Any]
    seeds: Any

    def to_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in self._asdict().items() if v is not None}


RfSweep = partial(
    Document,
    kind=ExperimentKind.RF_ASYMPTOTICS_SWEEP,
    mixture={
        "builder": MixtureBuilder.XOR,
        "dim": 30,
        "sigma2": 0.1,
        "mu_over_sqrt_d": 1.0,
    },
    model={},
    grid={"gamma": [1, 2]},
    seeds=[0, 1],
)
SgdSweep = partial(
    Document,
    kind=ExperimentKind.SGD_2LNN,
    mixture={
        "builder": MixtureBuilder.XOR,
        "dim": 20,
        "sigma2": 0.05,
        "mu_over_sqrt_d": 1.0,
    },
    model={"K": 4, "lr": 0.1, "weight_decay": 0.0, "steps": 100},
    grid={},
    seeds=[0],
)


def write_document(path: Path, document: Dict[str, Any]) -> Path:
    path.write_text(json.dumps(document))
    return path
