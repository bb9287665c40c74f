"""Noise synthesis: Gaussian and scaled-Poisson observation models."""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .image import Image, NoiseSpec


def add_gaussian_noise(x: Image, sigma: float, seed: int = 0) -> Image:
    """Return y = x + n with n drawn i.i.d. from N(0, sigma^2).

    The output is intentionally not clipped: the Gaussian risk estimators
    assume exact Gaussianity of y - x.
    """
    if sigma < 0:
        raise DomainError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=x.shape) if sigma > 0 else 0.0
    return Image(x.data + noise)


def add_poisson_noise(x: Image, zeta: float, seed: int = 0) -> Image:
    """Return y = zeta * P with P ~ Poisson(x / zeta) elementwise.

    Under this convention E[y] = x and Var[y] = zeta * x, so zeta controls
    the noise scale (smaller zeta means cleaner observations).
    """
    if zeta <= 0:
        raise DomainError("zeta must be > 0")
    if (x.data < 0).any():
        raise DomainError("Poisson noise requires non-negative intensities")
    rng = np.random.default_rng(seed)
    return Image(zeta * rng.poisson(x.data / zeta).astype(np.float64))


def apply_noise(x: Image, spec: NoiseSpec) -> Image:
    """Apply the noise model described by a NoiseSpec."""
    if spec.kind == "gaussian":
        return add_gaussian_noise(x, spec.sigma, spec.seed)
    return add_poisson_noise(x, spec.zeta, spec.seed)
