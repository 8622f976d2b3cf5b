"""Tuples."""

from pathlib import Path
from typing import (
    TYPE_CHECKING,
    Any,
    Dict,
    List,
    NamedTuple,
    Optional,
    Tuple,
)

import numpy as np

from gmix.taxonomies import Activation, DecayScaling, VRule

if TYPE_CHECKING:
    from gmix.mixture import CovarianceSpec


class Cluster(NamedTuple):
    """Unscaled mean μ^α, label y and probability mass P_α."""

    mean_scaled: np.ndarray
    label: int
    weight: float


class MixtureSpec(NamedTuple):

    dim: int
    clusters: Tuple[Cluster, ...]
    covariance: "CovarianceSpec"


class Sample(NamedTuple):

    x: np.ndarray
    y: int
    cluster_index: int


class LocalFieldGaussian(NamedTuple):
    """Mean and covariance of the local fields of one cluster."""

    mean: np.ndarray
    cov: np.ndarray


class GaussianDraws(NamedTuple):
    """Standard normal points with weights summing to one."""

    z: np.ndarray
    weights: np.ndarray


class IntegralId(NamedTuple):

    name: str
    indices: Tuple[int, ...]


class IntegralTable(NamedTuple):
    """Every I-integral of one local-field Gaussian, as dense tensors."""

    I1: np.ndarray
    I2: np.ndarray
    I31: np.ndarray
    I32: np.ndarray
    I3: np.ndarray
    I22: np.ndarray
    I42: np.ndarray
    I43: np.ndarray
    I4: np.ndarray


class OneDimStats(NamedTuple):
    """E f(x), E[(x - x̄) f(x)] and Var x."""

    mean: float
    centered: float
    variance: float


class PairStats(NamedTuple):
    """Joint statistics of f(x1) g(x2) for a strongly correlated pair."""

    joint: float
    centered_first: float
    centered_second: float
    var_first: float
    var_second: float
    covariance: float


class SpectrumGrid(NamedTuple):

    eigenvalues: np.ndarray
    masses: np.ndarray


class OrderParameterState(NamedTuple):
    """Densities m(ρ), q(ρ) per spectrum bin plus the second layer."""

    m: np.ndarray
    q: np.ndarray
    v: np.ndarray
    T: np.ndarray
    chi: float
    t: float
    spectrum: SpectrumGrid
    T_density: np.ndarray


class OdeConfig(NamedTuple):

    lr: float
    weight_decay: float
    activation: str = Activation.RELU
    dt: float = 0.05
    mc_samples: int = 10_000
    seed: int = 0


class TrajectoryPoint(NamedTuple):

    t: float
    pmse: float
    class_error: float
    state: Optional[OrderParameterState] = None


class XorAnsatz(NamedTuple):
    """Free overlaps (a_1..a_{K/2}, b_1..b_{K/2}) and the second layer."""

    m_free: np.ndarray
    v: np.ndarray


class FixedPointSettings(NamedTuple):

    activation: str = Activation.RELU
    mc_samples: int = 10_000
    seed: int = 0
    quadrature_nodes: Optional[int] = None
    tol: float = 1e-8
    max_iter: int = 2000
    damping: float = 0.5
    step: float = 10.0
    v_rule: str = VRule.REGRESSION
    mu_over_sqrt_d: float = 1.0


class FixedPointResult(NamedTuple):

    ansatz: XorAnsatz
    residual_norm: float
    pmse: float
    class_error: float
    converged: bool
    M: np.ndarray
    Q: np.ndarray
    iterations: int


class TwoLayerNet(NamedTuple):

    W: np.ndarray
    v: np.ndarray
    activation: str = Activation.RELU


class RfModel(NamedTuple):
    """Fixed projection F, trained readout w, optional centring offset."""

    F: np.ndarray
    w: np.ndarray
    activation: str = Activation.RELU
    feature_mean: Optional[np.ndarray] = None


class TrainConfig(NamedTuple):

    lr: float
    weight_decay: float
    steps: int
    eval_every: int
    eval_set_size: int = 10_000
    seed: int = 0
    decay_scaling: str = DecayScaling.ODE


class Observation(NamedTuple):

    t: float
    pmse: float
    class_error: float


class OrderParameters(NamedTuple):

    M: np.ndarray
    Q: np.ndarray
    v: np.ndarray
    T: np.ndarray
    chi: float


class FeatureMoments(NamedTuple):
    """Per-cluster feature means and structured covariances.

    cov_α = diag(diag[α]) + coupling · S_α (F Fᵀ / D) S_α, S_α = diag(scales[α])
    """

    means: np.ndarray
    diag: np.ndarray
    scales: np.ndarray
    coupling: float
    projection: np.ndarray


class AbcConstants(NamedTuple):

    a: float
    b: float
    c2: float
    d2: float


class RfAsymptotics(NamedTuple):

    w_hat: np.ndarray
    pmse_inf: float
    class_error_inf: float
    M: np.ndarray
    Q: np.ndarray


class ExperimentConfig(NamedTuple):

    kind: str
    mixture: Dict[str, Any]
    model: Dict[str, Any]
    grid: Dict[str, List[Any]]
    seeds: List[int]
    master_seed: int = 0
    output: Optional[str] = None
    recipe: Optional[str] = None


class Cell(NamedTuple):
    """One grid point of an experiment, runnable in a worker process."""

    index: int
    kind: str
    mixture: Dict[str, Any]
    model: Dict[str, Any]
    coords: Dict[str, Any]
    seed: int


class CellResult(NamedTuple):

    index: int
    coords: Dict[str, Any]
    seed: int
    status: str
    rows: List[Dict[str, Any]]
    error: Optional[str] = None
    wall_time: float = 0.0


class RunRecord(NamedTuple):

    config_hash: str
    seed: int
    rows: List[Dict[str, Any]]
    wall_time: float


class PlotSpec(NamedTuple):

    x: str
    y: Tuple[str, ...]
    series: Tuple[str, ...] = ()
    xlog: bool = False
    ylog: bool = False
    band: bool = False
    xlabel: Optional[str] = None
    ylabel: Optional[str] = None


class Context(NamedTuple):

    path: Optional[Path] = None
    recipe: Optional[str] = None
