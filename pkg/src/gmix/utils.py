"""Utilities."""

import hashlib
import json
import logging
from functools import lru_cache
from logging import Logger
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from scipy.special import erf

from gmix.taxonomies import Activation

SQRT2 = np.sqrt(2.0)
SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


@lru_cache
def format_console(name: str) -> Logger:
    logger = logging.getLogger(name)
    logger.propagate = False
    handler = logging.StreamHandler()
    formatter = logging.Formatter(
        "({asctime}) ({name}) ({levelname}) {message}",
        style="{",
        datefmt="%d-%m-%Y %H:%M",
    )
    handler.setFormatter(formatter)
    logger.addHandler(handler)

    return logger


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_prime(x: np.ndarray) -> np.ndarray:
    return (x > 0).astype(float)


def scaled_erf(x: np.ndarray) -> np.ndarray:
    """erf(x/√2)"""
    return erf(x / SQRT2)


def scaled_erf_prime(x: np.ndarray) -> np.ndarray:
    return SQRT_2_OVER_PI * np.exp(-0.5 * np.square(x))


ACTIVATIONS: Dict[str, Tuple[Callable, Callable]] = {
    Activation.RELU: (relu, relu_prime),
    Activation.SCALED_ERF: (scaled_erf, scaled_erf_prime),
}


def activation(name: str) -> Tuple[Callable, Callable]:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(
            f'Unknown activation "{name}", expected one of'
            f" {sorted(ACTIVATIONS)}."
        ) from None


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, *keys)."""
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def canonical_json(document: Any) -> str:
    return json.dumps(
        document, sort_keys=True, separators=(",", ":"), allow_nan=False
    )


def config_hash(document: Any) -> str:
    return hashlib.sha256(canonical_json(document).encode()).hexdigest()


def derive_seed(master_seed: int, coords: Dict[str, Any]) -> int:
    digest = hashlib.sha256(
        canonical_json({"master_seed": master_seed, "coords": coords})
        .encode()
    ).digest()
    return int.from_bytes(digest[:4], "little")


def resolve_path(path: Optional[Path] = None) -> Path:
    path = path or Path(".").resolve()
    path.mkdir(parents=True, exist_ok=True)
    return path
