"""Noise schedules, forward corruption, and reverse-process sampling steps.

Timesteps are integers in [0, T).  The forward process corrupts clean data
with the closed form x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; the
reverse process is either the ancestral update (variance beta_t) or the
deterministic DDIM update on a strictly decreasing timestep subsequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Array, as_tensor
from .errors import ConfigurationError, ContractError, DimensionError, TimestepError

# DDPM-convention endpoints are defined at T=1000; shorter desk-scale
# chains rescale them so the terminal abar is comparable.
REFERENCE_T = 1000
REFERENCE_BETA_START = 1e-4
REFERENCE_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta_t, alpha_t, abar_t and SNR(t) tables for T timesteps."""

    T: int
    beta: Array
    alpha: Array
    alpha_bar: Array
    snr: Array

    def check_t(self, t) -> np.ndarray:
        """Validate and return integer timesteps (scalar or array) in [0, T)."""
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer):
            raise TimestepError(f"timesteps must be integers, got dtype {t.dtype}")
        if t.size and (t.min() < 0 or t.max() >= self.T):
            raise TimestepError(f"timestep out of range [0, {self.T}): {t.min()}..{t.max()}")
        return t


def make_linear_schedule(T: int, beta_start: float | None = None, beta_end: float | None = None) -> NoiseSchedule:
    """Linear beta schedule with endpoints included.

    Default endpoints rescale the T=1000 convention by 1000/T so that the
    terminal abar_T stays comparable across chain lengths.
    """
    if T < 1:
        raise ConfigurationError(f"T must be >= 1, got {T}")
    # The rescaled defaults leave (0, 1) for very short chains; clamp them.
    if beta_end is None:
        beta_end = min(REFERENCE_BETA_END * (REFERENCE_T / T), 0.999)
    if beta_start is None:
        beta_start = min(REFERENCE_BETA_START * (REFERENCE_T / T), beta_end)
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigurationError(
            f"require 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    snr = alpha_bar / (1.0 - alpha_bar)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar, snr=snr)


def q_sample(x0: Array, t, eps: Array, sched: NoiseSchedule) -> Array:
    """Forward corruption: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    ``t`` may be a scalar or a per-row integer array matching x0's rows.
    """
    x0 = as_tensor(x0)
    eps = as_tensor(eps)
    if eps.shape != x0.shape:
        raise DimensionError(f"q_sample: eps shape {eps.shape} != x0 shape {x0.shape}")
    t = sched.check_t(t)
    ab = sched.alpha_bar[t]
    if ab.ndim == 1:  # per-row timesteps
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def ddpm_step(x_t: Array, t: int, eps_pred: Array, noise: Array, sched: NoiseSchedule) -> Array:
    """One ancestral reverse step; at t=0 the noise argument is ignored."""
    x_t = as_tensor(x_t)
    eps_pred = as_tensor(eps_pred)
    if eps_pred.shape != x_t.shape:
        raise DimensionError(f"ddpm_step: eps shape {eps_pred.shape} != x shape {x_t.shape}")
    t = int(sched.check_t(t))
    coef = (1.0 - sched.alpha[t]) / np.sqrt(1.0 - sched.alpha_bar[t])
    mean = (x_t - coef * eps_pred) / np.sqrt(sched.alpha[t])
    if t == 0:
        return mean
    noise = as_tensor(noise)
    if noise.shape != x_t.shape:
        raise DimensionError(f"ddpm_step: noise shape {noise.shape} != x shape {x_t.shape}")
    return mean + np.sqrt(sched.beta[t]) * noise


def ddim_step(x_t: Array, t: int, t_prev: int, eps_pred: Array, sched: NoiseSchedule) -> Array:
    """One deterministic DDIM step from t to t_prev (t_prev = -1 lands on x0)."""
    x_t = as_tensor(x_t)
    eps_pred = as_tensor(eps_pred)
    if eps_pred.shape != x_t.shape:
        raise DimensionError(f"ddim_step: eps shape {eps_pred.shape} != x shape {x_t.shape}")
    t = int(sched.check_t(t))
    t_prev = int(t_prev)
    if t_prev >= t:
        raise ContractError(f"ddim_step: t_prev ({t_prev}) must be < t ({t})")
    ab_t = sched.alpha_bar[t]
    ab_prev = 1.0 if t_prev < 0 else sched.alpha_bar[t_prev]
    x0_hat = (x_t - np.sqrt(1.0 - ab_t) * eps_pred) / np.sqrt(ab_t)
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_pred


@dataclass(frozen=True)
class SamplerKind:
    """Reverse-process sampler selection.

    ``ddpm_ancestral`` runs the full chain (num_inference_steps == T);
    ``ddim_deterministic`` runs a strictly decreasing subsequence of
    ``num_inference_steps`` timesteps.
    """

    kind: str = "ddim_deterministic"
    num_inference_steps: int = 50

    def __post_init__(self):
        if self.kind not in ("ddpm_ancestral", "ddim_deterministic"):
            raise ConfigurationError(f"unknown sampler kind {self.kind!r}")
        if self.num_inference_steps < 1:
            raise ConfigurationError("num_inference_steps must be positive")

    def timesteps(self, T: int) -> np.ndarray:
        """Strictly decreasing inference timesteps in [0, T)."""
        n = self.num_inference_steps
        if n > T:
            raise ConfigurationError(f"num_inference_steps ({n}) exceeds T ({T})")
        if self.kind == "ddpm_ancestral":
            if n != T:
                raise ConfigurationError(
                    "ddpm_ancestral visits every timestep; set num_inference_steps == T"
                )
            return np.arange(T - 1, -1, -1)
        return ((np.arange(n) * T) // n)[::-1]


def sample_loop(
    model: Callable[[Array, int], Array],
    sched: NoiseSchedule,
    sampler: SamplerKind,
    n: int,
    data_dim: int,
    seed: int,
) -> Array:
    """Draw ``n`` samples by iterating the reverse process from x_T ~ N(0, I).

    ``model(x, t)`` must return the noise prediction with x's shape.
    Deterministic given ``seed``.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, data_dim))
    if n == 0:
        return x
    ts = sampler.timesteps(sched.T)
    if sampler.kind == "ddpm_ancestral":
        for t in ts:
            t = int(t)
            eps = _checked_eps(model, x, t)
            noise = rng.standard_normal(x.shape) if t > 0 else np.zeros_like(x)
            x = ddpm_step(x, t, eps, noise, sched)
    else:
        for i, t in enumerate(ts):
            t = int(t)
            t_prev = int(ts[i + 1]) if i + 1 < len(ts) else -1
            eps = _checked_eps(model, x, t)
            x = ddim_step(x, t, t_prev, eps, sched)
    return x


def _checked_eps(model, x: Array, t: int) -> Array:
    eps = as_tensor(model(x, t))
    if eps.shape != x.shape:
        raise DimensionError(f"denoiser callback returned shape {eps.shape}, expected {x.shape}")
    return eps
