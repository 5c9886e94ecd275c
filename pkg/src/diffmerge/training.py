"""Diffusion training: weighted denoising losses and the gradient probe.

The loss family is expressed through a single canonical weight defined in
x0-prediction space (``loss_weight``).  For a given prediction target the
effective per-sample weight divides out the exact factor relating that
target's squared error to the x0 squared error (SNR(t) for noise
prediction, SNR(t)+1 for v-prediction), so all strategies are available
under any parameterization and remain numerically equivalent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Array, Graph, Node, as_tensor
from .denoiser import DenoiserConfig, add_param_leaves, denoiser_forward, denoiser_forward_graph
from .errors import ConfigurationError, ContractError, TrainingFailure
from .params import OptimizerState, ParamSet, optimizer_step
from .schedule import NoiseSchedule, q_sample

STRATEGY_KINDS = ("standard", "snr_plus_one", "truncated_snr", "min_snr_gamma", "p2")
TARGET_KINDS = ("eps_prediction", "x0_prediction", "v_prediction")


@dataclass(frozen=True)
class ReweightStrategy:
    """Loss reweighting selection; ``gamma`` and ``k`` apply where noted."""

    kind: str = "standard"
    gamma: float = 5.0  # min_snr_gamma (also the exponent for p2)
    k: float = 1.0  # p2 only

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigurationError(f"unknown reweighting strategy {self.kind!r}")
        if self.kind in ("min_snr_gamma", "p2") and not self.gamma > 0:
            raise ConfigurationError("gamma must be positive")
        if self.kind == "p2" and self.k < 0:
            raise ConfigurationError("k must be non-negative")


# P2 defaults follow the recommendation k=1, gamma=1.
P2_DEFAULT = ReweightStrategy(kind="p2", gamma=1.0, k=1.0)
STANDARD = ReweightStrategy()


def loss_weight(strategy: ReweightStrategy, t, sched: NoiseSchedule):
    """The canonical x0-prediction weight for timestep(s) ``t``."""
    t = sched.check_t(t)
    snr = sched.snr[t]
    if strategy.kind == "standard":
        return snr
    if strategy.kind == "snr_plus_one":
        return snr + 1.0
    if strategy.kind == "truncated_snr":
        return np.maximum(snr, 1.0)
    if strategy.kind == "min_snr_gamma":
        return np.minimum(snr, strategy.gamma)
    return snr / (strategy.k + snr) ** strategy.gamma  # p2


def check_target(target: str) -> str:
    if target not in TARGET_KINDS:
        raise ConfigurationError(f"unknown prediction target {target!r}")
    return target


def make_target(target: str, x0: Array, eps: Array, t, sched: NoiseSchedule) -> Array:
    """The regression target for the chosen parameterization."""
    check_target(target)
    if target == "eps_prediction":
        return eps
    if target == "x0_prediction":
        return x0
    ab = sched.alpha_bar[sched.check_t(t)]
    if ab.ndim == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * eps - np.sqrt(1.0 - ab) * x0


def recover_x0(target: str, pred: Array, x_t: Array, t, sched: NoiseSchedule) -> Array:
    """Algebraically invert a prediction back to the implied clean data."""
    check_target(target)
    ab = sched.alpha_bar[sched.check_t(t)]
    if ab.ndim == 1:
        ab = ab[:, None]
    if target == "eps_prediction":
        return (x_t - np.sqrt(1.0 - ab) * pred) / np.sqrt(ab)
    if target == "x0_prediction":
        return pred
    return np.sqrt(ab) * x_t - np.sqrt(1.0 - ab) * pred


def to_eps_prediction(target: str, pred: Array, x_t: Array, t, sched: NoiseSchedule) -> Array:
    """Convert a model output in any parameterization to a noise prediction."""
    check_target(target)
    ab = sched.alpha_bar[sched.check_t(t)]
    if ab.ndim == 1:
        ab = ab[:, None]
    if target == "eps_prediction":
        return pred
    if target == "x0_prediction":
        return (x_t - np.sqrt(ab) * pred) / np.sqrt(1.0 - ab)
    return np.sqrt(1.0 - ab) * x_t + np.sqrt(ab) * pred


def target_weight_divisor(target: str, t, sched: NoiseSchedule):
    """Factor relating the target's squared error to the x0 squared error."""
    check_target(target)
    snr = sched.snr[sched.check_t(t)]
    if target == "eps_prediction":
        return snr
    if target == "x0_prediction":
        return np.ones_like(snr)
    return snr + 1.0


def effective_weight(strategy: ReweightStrategy, target: str, t, sched: NoiseSchedule):
    """Per-sample weight applied to the squared error in target space."""
    return loss_weight(strategy, t, sched) / target_weight_divisor(target, t, sched)


def prediction_loss(
    params: ParamSet,
    config: DenoiserConfig,
    x0: Array,
    t: Array,
    eps: Array,
    sched: NoiseSchedule,
    strategy: ReweightStrategy = STANDARD,
    target: str = "eps_prediction",
) -> Node:
    """Weighted squared-error loss node for explicit draws (x0, t, eps).

    Returns mean_i w_i * ||pred_i - target_i||^2 attached to a fresh graph
    whose named leaves are the parameters.
    """
    x0 = as_tensor(x0)
    n = x0.shape[0]
    x_t = q_sample(x0, t, eps, sched)
    tgt = make_target(target, x0, eps, t, sched)
    w = np.broadcast_to(effective_weight(strategy, target, t, sched), (n,))

    g = Graph()
    leaves = add_param_leaves(g, params)
    pred = denoiser_forward_graph(g, leaves, x_t, t, config)
    diff = pred - g.leaf(tgt)
    weighted = (diff * diff) * g.leaf(np.repeat(w[:, None], x0.shape[1], axis=1))
    return g.scale(g.sumall(weighted), 1.0 / n)


def prediction_loss_value(
    params: ParamSet,
    config: DenoiserConfig,
    x0: Array,
    t: Array,
    eps: Array,
    sched: NoiseSchedule,
    strategy: ReweightStrategy = STANDARD,
    target: str = "eps_prediction",
) -> float:
    """Same quantity as :func:`prediction_loss` without building a graph."""
    x0 = as_tensor(x0)
    n = x0.shape[0]
    x_t = q_sample(x0, t, eps, sched)
    tgt = make_target(target, x0, eps, t, sched)
    w = np.broadcast_to(effective_weight(strategy, target, t, sched), (n,))
    pred = denoiser_forward(params, x_t, t, config)
    return float(np.sum(w[:, None] * (pred - tgt) ** 2) / n)


def diffusion_loss(
    params: ParamSet,
    config: DenoiserConfig,
    batch: Array,
    rng: np.random.Generator,
    sched: NoiseSchedule,
    strategy: ReweightStrategy = STANDARD,
    target: str = "eps_prediction",
) -> Node:
    """Loss node for one batch: t uniform per sample over [0, T), fresh noise."""
    batch = as_tensor(batch)
    if batch.size == 0:
        raise ContractError("diffusion_loss requires a non-empty batch")
    t = rng.integers(0, sched.T, size=batch.shape[0])
    eps = rng.standard_normal(batch.shape)
    return prediction_loss(params, config, batch, t, eps, sched, strategy, target)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    num_iterations: int = 5000
    optimizer: str = "adam"
    learning_rate: float = 2e-3
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.num_iterations < 0:
            raise ConfigurationError("batch_size must be positive, num_iterations >= 0")

    def make_optimizer(self) -> OptimizerState:
        if self.optimizer == "sgd":
            return OptimizerState.sgd(self.learning_rate)
        return OptimizerState.adam(self.learning_rate)


def optimize_loop(
    params: ParamSet,
    make_loss: Callable[[ParamSet, int], Node],
    num_iterations: int,
    opt_state: OptimizerState,
) -> tuple[ParamSet, list[float]]:
    """Generic loss-driven optimizer loop with divergence detection."""
    trace: list[float] = []
    for it in range(num_iterations):
        loss = make_loss(params, it)
        value = float(loss.value)
        if not np.isfinite(value):
            raise TrainingFailure(f"non-finite loss {value} at iteration {it}", iteration=it)
        loss.graph.backward(loss)
        grads = ParamSet(loss.graph.parameter_grads())
        params = optimizer_step(opt_state, params, grads)
        trace.append(value)
    return params, trace


def train(
    params: ParamSet,
    config: DenoiserConfig,
    dataset: Array,
    train_config: TrainConfig,
    sched: NoiseSchedule,
    strategy: ReweightStrategy = STANDARD,
    target: str = "eps_prediction",
) -> tuple[ParamSet, list[float]]:
    """Train on ``dataset`` with uniform timestep sampling; returns (params, loss trace)."""
    dataset = as_tensor(dataset)
    if dataset.size == 0:
        raise ContractError("train requires a non-empty dataset")
    rng = np.random.default_rng(train_config.seed)
    opt = train_config.make_optimizer()

    def make_loss(p: ParamSet, it: int) -> Node:
        idx = rng.integers(0, dataset.shape[0], size=train_config.batch_size)
        return diffusion_loss(p, config, dataset[idx], rng, sched, strategy, target)

    return optimize_loop(params, make_loss, train_config.num_iterations, opt)


def cosine_similarity_matrix(vectors: list[Array]) -> Array:
    """Pairwise cosine similarities; exactly symmetric by construction."""
    u = np.stack([np.ravel(v) for v in vectors])
    norms = np.linalg.norm(u, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    u = u / safe[:, None]
    m = u @ u.T
    return (m + m.T) / 2.0


def bucket_bounds(T: int, num_buckets: int) -> list[tuple[int, int]]:
    """``num_buckets`` contiguous intervals covering [0, T); all non-empty."""
    if num_buckets < 2:
        raise ContractError("need at least 2 buckets")
    bounds = [-(-i * T // num_buckets) for i in range(num_buckets + 1)]
    out = list(zip(bounds[:-1], bounds[1:]))
    for lo, hi in out:
        if hi <= lo:
            raise ContractError(f"bucket [{lo}, {hi}) contains no timesteps (T={T})")
    return out


def gradient_similarity_matrix(
    params: ParamSet,
    config: DenoiserConfig,
    dataset: Array,
    sched: NoiseSchedule,
    num_buckets: int,
    samples_per_bucket: int,
    seed: int = 0,
) -> Array:
    """Cosine similarities between per-bucket parameter gradients.

    The evaluation inputs and noise draws are shared across buckets so the
    bucket gradients differ only through the timesteps they see.
    """
    dataset = as_tensor(dataset)
    buckets = bucket_bounds(sched.T, num_buckets)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, dataset.shape[0], size=samples_per_bucket)
    x0 = dataset[idx]
    eps = rng.standard_normal(x0.shape)
    grads = []
    for lo, hi in buckets:
        t = rng.integers(lo, hi, size=samples_per_bucket)
        loss = prediction_loss(params, config, x0, t, eps, sched)
        loss.graph.backward(loss)
        flat = np.concatenate([g.ravel() for g in loss.graph.parameter_grads().values()])
        grads.append(flat)
    return cosine_similarity_matrix(grads)
