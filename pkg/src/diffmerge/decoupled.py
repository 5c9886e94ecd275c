"""Decoupled finetuning: one specialist model per contiguous timestep range.

The chain [0, T) is split into N non-overlapping ranges.  Each specialist
starts from the pretrained weights and trains on timesteps drawn mostly
from its own range (probability 1-p) and occasionally from the full chain
(probability p), with an anchoring penalty that keeps its noise
predictions close to the frozen pretrained model's.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Array, Graph, Node, as_tensor
from .denoiser import (
    DenoiserConfig,
    add_param_leaves,
    denoiser_forward,
    denoiser_forward_graph,
    expected_param_names,
)
from .errors import AlignmentError, ConfigurationError, ContractError
from .params import ParamSet
from .schedule import NoiseSchedule, q_sample
from .training import TrainConfig, optimize_loop


@dataclass(frozen=True)
class RangePartition:
    """N contiguous, non-overlapping integer timestep ranges covering [0, T).

    Boundaries are the integer realization of the real-valued cut points
    i*T/N: range i holds exactly the integers t with i*T/N <= t < (i+1)*T/N,
    which keeps membership consistent with the dispatch index floor(t*N/T).
    """

    T: int
    N: int
    ranges: tuple[tuple[int, int], ...]

    def index_of(self, t: int) -> int:
        """The unique range containing timestep t."""
        t = int(t)
        if not 0 <= t < self.T:
            raise ConfigurationError(f"timestep {t} outside [0, {self.T})")
        for i, (lo, hi) in enumerate(self.ranges):
            if lo <= t < hi:
                return i
        raise AssertionError("partition does not cover its domain")  # unreachable

    def sizes(self) -> list[int]:
        return [hi - lo for lo, hi in self.ranges]


def partition_ranges(T: int, N: int) -> RangePartition:
    """Split [0, T) into N contiguous non-overlapping integer ranges."""
    if not 1 <= N <= T:
        raise ConfigurationError(f"need 1 <= N <= T, got N={N}, T={T}")
    bounds = [-(-i * T // N) for i in range(N + 1)]  # ceil(i*T/N)
    return RangePartition(T=T, N=N, ranges=tuple(zip(bounds[:-1], bounds[1:])))


@dataclass(frozen=True)
class DecoupleConfig:
    """Settings for one family of decoupled finetuning runs."""

    partition: RangePartition
    p: float = 0.4  # probability of drawing from the full chain
    consistency_weight: float = 1.0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(num_iterations=1500))

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError(f"p must lie in [0, 1], got {self.p}")


def sample_timesteps(
    range_index: int, config: DecoupleConfig, rng: np.random.Generator, size: int
) -> np.ndarray:
    """Mixture draw: in-range uniform w.p. 1-p, full-chain uniform w.p. p."""
    part = config.partition
    if not 0 <= range_index < part.N:
        raise ConfigurationError(f"range index {range_index} outside [0, {part.N})")
    lo, hi = part.ranges[range_index]
    out = rng.integers(lo, hi, size=size)
    full = rng.random(size) < config.p
    out[full] = rng.integers(0, part.T, size=int(full.sum()))
    return out


def sample_timestep(range_index: int, config: DecoupleConfig, rng: np.random.Generator) -> int:
    return int(sample_timesteps(range_index, config, rng, size=1)[0])


def _teacher_config(teacher: ParamSet, config: DenoiserConfig) -> DenoiserConfig:
    """Resolve the config the teacher drives.

    A projection-free teacher is accepted alongside a projection-enabled
    student config (identity projections are transparent, so the teacher's
    outputs are unaffected by the difference).
    """
    if teacher.names() == expected_param_names(config):
        return config
    plain = replace(config, use_projection=False)
    if teacher.names() == expected_param_names(plain):
        return plain
    raise AlignmentError("teacher parameters do not match the architecture")


def consistency_loss(
    teacher: ParamSet,
    student: ParamSet,
    config: DenoiserConfig,
    x_t: Array,
    t,
) -> Node:
    """mean_i ||eps_teacher_i - eps_student_i||^2; no gradient reaches the teacher.

    The teacher's output enters the graph as a constant, so only the
    student receives gradients.  The teacher may lack the projection
    entries (it is then evaluated projection-free, which is equivalent).
    """
    tconf = _teacher_config(teacher, config)
    x_t = as_tensor(x_t)
    g = Graph()
    leaves = add_param_leaves(g, student)
    pred = denoiser_forward_graph(g, leaves, x_t, t, config)
    anchor = g.leaf(denoiser_forward(teacher, x_t, t, tconf))
    diff = pred - anchor
    return g.scale(g.sumall(diff * diff), 1.0 / x_t.shape[0])


def decoupled_loss_components(
    teacher: ParamSet,
    student: ParamSet,
    config: DenoiserConfig,
    x0: Array,
    t: Array,
    eps: Array,
    sched: NoiseSchedule,
) -> tuple[Node, Node]:
    """(denoising term, consistency term) on one graph for explicit draws.

    Both terms are batch means of per-sample squared L2 norms; the teacher
    forward runs once per batch and enters as a constant.
    """
    tconf = _teacher_config(teacher, config)
    x0 = as_tensor(x0)
    n = x0.shape[0]
    x_t = q_sample(x0, t, eps, sched)

    g = Graph()
    leaves = add_param_leaves(g, student)
    pred = denoiser_forward_graph(g, leaves, x_t, t, config)

    d1 = pred - g.leaf(as_tensor(eps))
    denoise = g.scale(g.sumall(d1 * d1), 1.0 / n)
    d2 = pred - g.leaf(denoiser_forward(teacher, x_t, t, tconf))
    consistency = g.scale(g.sumall(d2 * d2), 1.0 / n)
    return denoise, consistency


def decoupled_loss(
    teacher: ParamSet,
    student: ParamSet,
    config: DenoiserConfig,
    batch: Array,
    range_index: int,
    dconfig: DecoupleConfig,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> Node:
    """Per-range training objective: denoising plus weighted consistency."""
    batch = as_tensor(batch)
    if batch.size == 0:
        raise ContractError("decoupled_loss requires a non-empty batch")
    t = sample_timesteps(range_index, dconfig, rng, size=batch.shape[0])
    eps = rng.standard_normal(batch.shape)
    denoise, consistency = decoupled_loss_components(
        teacher, student, config, batch, t, eps, sched
    )
    g = denoise.graph
    return denoise + g.scale(consistency, dconfig.consistency_weight)


def finetune_range(
    pretrained: ParamSet,
    range_index: int,
    config: DenoiserConfig,
    dataset: Array,
    dconfig: DecoupleConfig,
    sched: NoiseSchedule,
) -> tuple[ParamSet, list[float]]:
    """Finetune one specialist, starting from (and anchored to) the pretrained model."""
    dataset = as_tensor(dataset)
    if dataset.size == 0:
        raise ContractError("finetune_range requires a non-empty dataset")
    if not 0 <= range_index < dconfig.partition.N:
        raise ConfigurationError(f"range index {range_index} outside [0, {dconfig.partition.N})")
    if pretrained.names() != expected_param_names(config):
        raise AlignmentError(
            "finetune_range: parameters do not match the architecture "
            "(augment the base model with identity projections first if the "
            "config enables them)"
        )
    tconf = dconfig.train
    rng = np.random.default_rng(tconf.seed)
    opt = tconf.make_optimizer()
    student = pretrained.copy()

    def make_loss(p: ParamSet, it: int) -> Node:
        idx = rng.integers(0, dataset.shape[0], size=tconf.batch_size)
        return decoupled_loss(
            pretrained, p, config, dataset[idx], range_index, dconfig, sched, rng
        )

    return optimize_loop(student, make_loss, tconf.num_iterations, opt)
