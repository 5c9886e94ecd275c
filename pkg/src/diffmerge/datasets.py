"""Small 2-D synthetic datasets for desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .autodiff import Array
from .errors import ConfigurationError

DATASET_KINDS = ("gaussian_mixture", "two_moons", "swiss_roll_2d")


def gaussian_mixture_ring(
    n: int, components: int = 8, radius: float = 1.0, std: float = 0.08, seed: int = 0
) -> Array:
    """Equal-weight Gaussian bumps spaced evenly on a circle."""
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(components) / components
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    which = rng.integers(0, components, size=n)
    return centers[which] + std * rng.standard_normal((n, 2))


def two_moons(n: int, noise: float = 0.06, seed: int = 0) -> Array:
    """Two interleaving half circles, centered and scaled to unit-ish extent."""
    rng = np.random.default_rng(seed)
    n_upper = n // 2
    phi_u = np.pi * rng.random(n_upper)
    phi_l = np.pi * rng.random(n - n_upper)
    upper = np.stack([np.cos(phi_u), np.sin(phi_u)], axis=1)
    lower = np.stack([1.0 - np.cos(phi_l), 0.5 - np.sin(phi_l)], axis=1)
    pts = np.concatenate([upper, lower]) + noise * rng.standard_normal((n, 2))
    pts -= np.array([0.5, 0.25])
    return pts / 1.5


def swiss_roll_2d(n: int, noise: float = 0.05, seed: int = 0) -> Array:
    """A flat spiral: radius grows linearly with angle."""
    rng = np.random.default_rng(seed)
    phi = 1.5 * np.pi + 3.0 * np.pi * rng.random(n)
    r = phi / (4.5 * np.pi)
    pts = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    return pts + noise * rng.standard_normal((n, 2))


def make_dataset(kind: str, size: int, seed: int = 0) -> Array:
    if size < 1:
        raise ConfigurationError("dataset size must be positive")
    if kind == "gaussian_mixture":
        return gaussian_mixture_ring(size, seed=seed)
    if kind == "two_moons":
        return two_moons(size, seed=seed)
    if kind == "swiss_roll_2d":
        return swiss_roll_2d(size, seed=seed)
    raise ConfigurationError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
