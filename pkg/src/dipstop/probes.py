"""Random probe vectors for Monte-Carlo divergence and finite differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

PROBE_DISTRIBUTIONS = ("standard_normal", "rademacher")


@dataclass(frozen=True)
class ProbeVector:
    """A random vector shaped like an image, plus how it was drawn."""

    values: np.ndarray
    distribution: str
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in PROBE_DISTRIBUTIONS:
            raise DomainError(f"unknown probe distribution {self.distribution!r}")
        vals = np.asarray(self.values, dtype=np.float64)
        if self.distribution == "rademacher" and not np.all(np.abs(vals) == 1.0):
            raise DomainError("rademacher probe values must be +1 or -1")
        object.__setattr__(self, "values", vals)


def make_probe(shape: tuple[int, ...], distribution: str, seed: int) -> ProbeVector:
    """Draw a probe of the given shape from a seeded generator.

    ``standard_normal`` probes feed the Monte-Carlo divergence estimate;
    ``rademacher`` (+/-1 equiprobable) probes feed the Poisson
    finite-difference term.
    """
    if distribution not in PROBE_DISTRIBUTIONS:
        raise DomainError(f"unknown probe distribution {distribution!r}")
    rng = np.random.default_rng(seed)
    if distribution == "standard_normal":
        vals = rng.standard_normal(shape)
    else:
        vals = rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    return ProbeVector(values=vals, distribution=distribution, seed=seed)
