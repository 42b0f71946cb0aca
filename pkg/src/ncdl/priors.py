"""Target class-marginal distributions for constrained pseudo-labeling."""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri


@dataclass(frozen=True)
class PriorMarginals:
    """Per-class target masses; sums to the number of samples being labeled."""

    masses: np.ndarray  # (C,), strictly positive
    total_mass: float

    def __post_init__(self):
        if self.masses.ndim != 1 or self.masses.size < 1:
            raise ValueError("masses must be a non-empty vector")
        if self.masses.min() <= 0:
            raise ValueError("all prior masses must be positive")
        if abs(float(self.masses.sum()) - self.total_mass) > 1e-6 * self.total_mass:
            raise ValueError("prior masses must sum to total_mass")

    @property
    def num_classes(self) -> int:
        return int(self.masses.size)


def lognormal_prior(num_classes: int, total_mass: float, mu: float = 1.0, sigma: float = 0.5) -> PriorMarginals:
    """Long-tail marginals from a log-normal law, largest mass first.

    The law is discretized deterministically: evaluate the Lognormal(mu, sigma)
    inverse CDF at the quantile midpoints (i + 0.5) / C, sort descending, and
    rescale so the masses sum to total_mass.
    """
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    if total_mass <= 0:
        raise ValueError("total_mass must be positive")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    quantiles = (np.arange(num_classes) + 0.5) / num_classes
    values = np.exp(mu + sigma * ndtri(quantiles))
    values = np.sort(values)[::-1]
    masses = values * (total_mass / values.sum())
    return PriorMarginals(masses=masses, total_mass=float(total_mass))


def uniform_prior(num_classes: int, total_mass: float) -> PriorMarginals:
    """Equal mass per class."""
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    if total_mass <= 0:
        raise ValueError("total_mass must be positive")
    masses = np.full(num_classes, total_mass / num_classes, dtype=np.float64)
    return PriorMarginals(masses=masses, total_mass=float(total_mass))


def build_prior(kind: str, num_classes: int, total_mass: float, mu: float = 1.0, sigma: float = 0.5) -> PriorMarginals:
    if kind == "lognormal":
        return lognormal_prior(num_classes, total_mass, mu=mu, sigma=sigma)
    if kind == "uniform":
        return uniform_prior(num_classes, total_mass)
    raise ValueError(f"unknown prior kind {kind!r}")
