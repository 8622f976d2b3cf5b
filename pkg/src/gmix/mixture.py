"""Gaussian-mixture classification tasks and their sampler."""

import json
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Tuple

import numpy as np

from gmix.taxonomies import CovarianceKind, MixtureBuilder, Regime
from gmix.tuples import Cluster, MixtureSpec, Sample
from gmix.utils import format_console

WEIGHT_TOL = 1e-12
SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-8


class MixtureError(Exception):
    pass


class CovarianceSpec:
    """Covariance Ω shared by every cluster of a mixture.

    Dense matrices are validated with their eigenvalues on construction;
    eigenvectors and the square root are only computed on first access.
    """

    def __init__(
        self,
        kind: str,
        dim: int,
        sigma2: Optional[float] = None,
        matrix: Optional[np.ndarray] = None,
        eigenvalues: Optional[np.ndarray] = None,
        eigenvectors: Optional[np.ndarray] = None,
    ):
        self.kind = kind
        self.dim = dim
        self.sigma2 = sigma2
        self.matrix = matrix
        self._eigenvalues = eigenvalues
        self._eigenvectors = eigenvectors
        self._validate()

    @classmethod
    def isotropic(cls, dim: int, sigma2: float) -> "CovarianceSpec":
        return cls(CovarianceKind.ISOTROPIC, dim, sigma2=float(sigma2))

    @classmethod
    def dense(cls, matrix: np.ndarray) -> "CovarianceSpec":
        matrix = np.asarray(matrix, dtype=float)
        return cls(CovarianceKind.DENSE, matrix.shape[0], matrix=matrix)

    @classmethod
    def spectral(
        cls, eigenvalues: np.ndarray, eigenvectors: np.ndarray
    ) -> "CovarianceSpec":
        eigenvalues = np.asarray(eigenvalues, dtype=float)
        return cls(
            CovarianceKind.SPECTRAL,
            eigenvalues.shape[0],
            eigenvalues=eigenvalues,
            eigenvectors=np.asarray(eigenvectors, dtype=float),
        )

    def _validate(self):
        if self.kind == CovarianceKind.ISOTROPIC:
            if self.sigma2 is None or not self.sigma2 >= 0:
                raise MixtureError(
                    f"Isotropic variance must be >= 0, got {self.sigma2}."
                )
        elif self.kind == CovarianceKind.DENSE:
            matrix = self.matrix

            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise MixtureError(
                    f"Dense covariance must be square, got {matrix.shape}."
                )

            asymmetry = np.max(np.abs(matrix - matrix.T), initial=0.0)

            if asymmetry > SYMMETRY_TOL:
                raise MixtureError(
                    "Dense covariance is not symmetric (max |Ω - Ωᵀ| ="
                    f" {asymmetry:.3g})."
                )

            values = np.linalg.eigvalsh(matrix)
            top = max(values[-1], 0.0)

            if values[0] < -PSD_TOL * top:
                raise MixtureError(
                    "Dense covariance is not positive semi-definite (min"
                    f" eigenvalue {values[0]:.3g})."
                )
        elif self.kind == CovarianceKind.SPECTRAL:
            if np.any(self._eigenvalues < 0):
                raise MixtureError(
                    "Spectral covariance has negative eigenvalues (min"
                    f" {self._eigenvalues.min():.3g})."
                )

            if self._eigenvectors.shape != (self.dim, self.dim):
                raise MixtureError(
                    f"Expected {self.dim}x{self.dim} eigenvectors, got"
                    f" {self._eigenvectors.shape}."
                )
        else:
            raise MixtureError(f'Unknown covariance kind "{self.kind}".')

    @cached_property
    def spectrum(self) -> Tuple[np.ndarray, np.ndarray]:
        """Ascending eigenvalues and orthonormal eigenvectors (columns)."""
        if self.kind == CovarianceKind.ISOTROPIC:
            return np.full(self.dim, self.sigma2), np.eye(self.dim)

        if self.kind == CovarianceKind.SPECTRAL:
            order = np.argsort(self._eigenvalues, kind="stable")
            return self._eigenvalues[order], self._eigenvectors[:, order]

        format_console(__name__).debug(
            f"Eigendecomposing {self.dim}x{self.dim} covariance."
        )
        values, vectors = np.linalg.eigh(self.matrix)
        return np.maximum(values, 0.0), vectors

    @cached_property
    def sqrt(self) -> np.ndarray:
        values, vectors = self.spectrum
        return (vectors * np.sqrt(values)) @ vectors.T

    @property
    def chi(self) -> float:
        if self.kind == CovarianceKind.ISOTROPIC:
            return self.sigma2**2

        return float(np.mean(np.square(self.spectrum[0])))

    def dense_matrix(self) -> np.ndarray:
        if self.kind == CovarianceKind.ISOTROPIC:
            return self.sigma2 * np.eye(self.dim)

        if self.kind == CovarianceKind.DENSE:
            return self.matrix

        values, vectors = self.spectrum
        return (vectors * values) @ vectors.T

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Rows of X multiplied by Ω."""
        if self.kind == CovarianceKind.ISOTROPIC:
            return self.sigma2 * X

        return X @ self.dense_matrix()

    def apply_sqrt(self, Z: np.ndarray) -> np.ndarray:
        """Rows of Z multiplied by Ω^{1/2}."""
        if self.kind == CovarianceKind.ISOTROPIC:
            return np.sqrt(self.sigma2) * Z

        return Z @ self.sqrt

    def to_document(self) -> dict:
        if self.kind == CovarianceKind.ISOTROPIC:
            return {"kind": self.kind, "sigma2": self.sigma2}

        if self.kind == CovarianceKind.DENSE:
            return {"kind": self.kind, "matrix": self.matrix.tolist()}

        return {
            "kind": self.kind,
            "eigenvalues": self._eigenvalues.tolist(),
            "eigenvectors": self._eigenvectors.tolist(),
        }


def make_mixture(
    dim: int, clusters: Iterable[Cluster], covariance: CovarianceSpec
) -> MixtureSpec:
    clusters = tuple(
        Cluster(np.asarray(c.mean_scaled, dtype=float), int(c.label), c.weight)
        for c in clusters
    )

    if dim < 1:
        raise MixtureError(f"Dimension must be positive, got {dim}.")

    if not clusters:
        raise MixtureError("A mixture needs at least one cluster.")

    for i, cluster in enumerate(clusters):
        if cluster.label not in (1, -1):
            raise MixtureError(
                f"Cluster {i} has label {cluster.label}, expected +1 or -1."
            )

        if not cluster.weight > 0:
            raise MixtureError(
                f"Cluster {i} has weight {cluster.weight}, expected > 0."
            )

        if cluster.mean_scaled.shape != (dim,):
            raise MixtureError(
                f"Cluster {i} mean has shape {cluster.mean_scaled.shape},"
                f" expected ({dim},)."
            )

    total = sum(c.weight for c in clusters)

    if abs(total - 1.0) > WEIGHT_TOL:
        raise MixtureError(f"Cluster weights sum to {total}, expected 1.")

    if {c.label for c in clusters} != {1, -1}:
        raise MixtureError("Both labels +1 and -1 need at least one cluster.")

    if covariance.dim != dim:
        raise MixtureError(
            f"Covariance dimension {covariance.dim} does not match {dim}."
        )

    return MixtureSpec(dim, clusters, covariance)


def _axis(dim: int, axis: int, norm: float) -> np.ndarray:
    mean = np.zeros(dim)
    mean[axis] = norm
    return mean


def build_xor_mixture(
    dim: int,
    mu_norm: float,
    sigma2: float,
    mu_norm_second: Optional[float] = None,
) -> MixtureSpec:
    """Means ±μ e₁ (label +1) and ±μ e₂ (label -1), weight ¼ each.

    Clusters are ordered (+0, +1, -0, -1). `mu_norm_second` sets a different
    norm on the label -1 axis.
    """
    if dim < 2:
        raise MixtureError(f"The XOR mixture needs dim >= 2, got {dim}.")

    second = mu_norm if mu_norm_second is None else mu_norm_second

    if not (mu_norm > 0 and second > 0):
        raise MixtureError(
            f"Mean norms must be positive, got {mu_norm} and {second}."
        )

    clusters = [
        Cluster(_axis(dim, 0, mu_norm), 1, 0.25),
        Cluster(_axis(dim, 0, -mu_norm), 1, 0.25),
        Cluster(_axis(dim, 1, second), -1, 0.25),
        Cluster(_axis(dim, 1, -second), -1, 0.25),
    ]
    return make_mixture(dim, clusters, CovarianceSpec.isotropic(dim, sigma2))


def build_three_cluster_mixture(
    dim: int,
    mu0: float,
    sigma2: float,
    mu0_second: Optional[float] = None,
) -> MixtureSpec:
    second = mu0 if mu0_second is None else mu0_second
    clusters = [
        Cluster(np.zeros(dim), 1, 0.5),
        Cluster(_axis(dim, 0, mu0), -1, 0.25),
        Cluster(_axis(dim, 0, -second), -1, 0.25),
    ]
    return make_mixture(dim, clusters, CovarianceSpec.isotropic(dim, sigma2))


def build_regime_mixture(
    builder: str, dim: int, sigma2: float, regime: str
) -> MixtureSpec:
    """Low (|μ| ~ √D), high (|μ| ~ D) or mixed separation."""
    low, high = np.sqrt(dim), float(dim)
    norms = {
        Regime.LOW: (low, low),
        Regime.HIGH: (high, high),
        Regime.MIXED: (low, high),
    }

    if regime not in norms:
        raise MixtureError(f'Unknown regime "{regime}".')

    first, second = norms[regime]

    if builder == MixtureBuilder.XOR:
        return build_xor_mixture(dim, first, sigma2, second)

    if builder == MixtureBuilder.THREE_CLUSTER:
        return build_three_cluster_mixture(dim, first, sigma2, second)

    raise MixtureError(f'Builder "{builder}" has no regimes.')


def _covariance_from_document(document: dict, dim: int) -> CovarianceSpec:
    kind = document.get("kind")

    if kind == CovarianceKind.ISOTROPIC:
        return CovarianceSpec.isotropic(dim, document["sigma2"])

    if kind == CovarianceKind.DENSE:
        return CovarianceSpec.dense(np.array(document["matrix"], dtype=float))

    if kind == CovarianceKind.SPECTRAL:
        return CovarianceSpec.spectral(
            np.array(document["eigenvalues"], dtype=float),
            np.array(document["eigenvectors"], dtype=float),
        )

    raise MixtureError(f'Unknown covariance kind "{kind}".')


def load_mixture(path: Path) -> MixtureSpec:
    try:
        with Path(path).open() as f:
            document = json.load(f)

        dim = int(document["dim"])
        clusters = [
            Cluster(
                np.array(c["mean"], dtype=float),
                int(c["label"]),
                float(c["weight"]),
            )
            for c in document["clusters"]
        ]
        covariance = _covariance_from_document(document["covariance"], dim)
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise MixtureError(f'Could not parse mixture "{path}": {e}') from e

    spec = make_mixture(dim, clusters, covariance)
    format_console(__name__).info(
        f'Loaded {len(spec.clusters)} clusters in D={dim} from "{path}".'
    )
    return spec


def dump_mixture(spec: MixtureSpec, path: Path) -> Path:
    document = {
        "dim": spec.dim,
        "clusters": [
            {
                "mean": c.mean_scaled.tolist(),
                "label": c.label,
                "weight": c.weight,
            }
            for c in spec.clusters
        ],
        "covariance": spec.covariance.to_document(),
    }
    path = Path(path)
    path.write_text(json.dumps(document, indent=2))
    return path


def means(spec: MixtureSpec) -> np.ndarray:
    return np.stack([c.mean_scaled for c in spec.clusters])


def weights(spec: MixtureSpec) -> np.ndarray:
    return np.array([c.weight for c in spec.clusters])


def labels(spec: MixtureSpec) -> np.ndarray:
    return np.array([c.label for c in spec.clusters])


def mean_overlaps(spec: MixtureSpec) -> np.ndarray:
    """T^{αβ} = μ^α·μ^β / D"""
    mu = means(spec)
    return mu @ mu.T / spec.dim


def sample_batch(
    spec: MixtureSpec, rng: np.random.Generator, n: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inputs (n, D), labels (n,) and cluster indices (n,)."""
    index = rng.choice(len(spec.clusters), size=n, p=weights(spec))
    noise = spec.covariance.apply_sqrt(rng.standard_normal((n, spec.dim)))
    X = means(spec)[index] / np.sqrt(spec.dim) + noise
    return X, labels(spec)[index], index


def sample(spec: MixtureSpec, rng: np.random.Generator) -> Sample:
    X, y, index = sample_batch(spec, rng, 1)
    return Sample(X[0], int(y[0]), int(index[0]))
