"""Two-layer networks and random features on Gaussian mixtures."""

__version__ = "0.1.0"
