"""Experiment configuration: defaults, flat key=value files, seed streams.

Config files are plain text, one ``section.key=value`` per line with ``#``
comments.  Command-line ``--set section.key=value`` overrides file values,
which override the defaults below.  The canonical serialization of a
config (sorted key=value lines) feeds the config hash recorded in every
output artifact.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .decoupled import DecoupleConfig, partition_ranges
from .denoiser import DenoiserConfig
from .errors import ConfigurationError
from .merging import GridSpec
from .schedule import NoiseSchedule, SamplerKind, make_linear_schedule
from .training import ReweightStrategy, TrainConfig


def subseed(seed: int, tag: str) -> int:
    """A deterministic per-task seed derived from the master seed."""
    return int(np.random.SeedSequence([seed, zlib.crc32(tag.encode())]).generate_state(1)[0])


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {s!r}")


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _parse_float_list(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _parse_opt_float(s: str):
    return None if s.lower() in ("none", "") else float(s)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs, flattened into typed fields."""

    seed: int = 0
    # dataset
    dataset_kind: str = "gaussian_mixture"
    dataset_size: int = 20000
    # noise schedule
    timesteps: int = 100
    beta_start: float | None = None
    beta_end: float | None = None
    # model
    data_dim: int = 2
    hidden_dims: tuple[int, ...] = (128, 128, 128)
    time_embed_dim: int = 32
    # base training
    train_batch_size: int = 64
    train_iterations: int = 5000
    learning_rate: float = 2e-3
    optimizer: str = "adam"
    strategy: str = "standard"
    strategy_gamma: float = 5.0
    strategy_k: float = 1.0
    target: str = "eps_prediction"
    # decoupled finetuning
    num_ranges: int = 4
    p: float = 0.4
    finetune_iterations: int = 1500
    finetune_learning_rate: float = 5e-4
    consistency_weight: float = 1.0
    use_projection: bool = True
    # sampler
    sampler_kind: str = "ddim_deterministic"
    num_inference_steps: int = 50
    # merge-weight grid search
    grid_values: tuple[float, ...] | None = None  # shared per-weight list; None = range form
    coarse_min: float = 0.0
    coarse_max: float = 1.0
    coarse_step: float = 0.25
    refine_radius: float | None = None
    fine_step: float = 0.05
    search_samples: int = 2000
    # metric
    metric_projections: int = 128
    metric_samples: int = 10000
    # gradient probe
    probe_buckets: int = 10
    probe_samples: int = 256
    # landscape; extent <= 0 means auto (1.5x the larger task-vector norm
    # in task-vector mode, 1.0 otherwise)
    landscape_resolution: int = 9
    landscape_extent: float = -1.0
    landscape_samples: int = 256
    landscape_t_lo: int = -1  # -1 disables the restriction
    landscape_t_hi: int = -1

    # ------------------------------------------------------------------
    # derived objects
    # ------------------------------------------------------------------
    def schedule(self) -> NoiseSchedule:
        return make_linear_schedule(self.timesteps, self.beta_start, self.beta_end)

    def denoiser_config(self, use_projection: bool = False) -> DenoiserConfig:
        return DenoiserConfig(
            data_dim=self.data_dim,
            hidden_dims=self.hidden_dims,
            time_embed_dim=self.time_embed_dim,
            use_projection=use_projection,
        )

    def reweight_strategy(self) -> ReweightStrategy:
        return ReweightStrategy(kind=self.strategy, gamma=self.strategy_gamma, k=self.strategy_k)

    def train_config(self, seed: int, iterations: int | None = None, lr: float | None = None) -> TrainConfig:
        return TrainConfig(
            batch_size=self.train_batch_size,
            num_iterations=self.train_iterations if iterations is None else iterations,
            optimizer=self.optimizer,
            learning_rate=self.learning_rate if lr is None else lr,
            seed=seed,
        )

    def decouple_config(self, seed: int) -> DecoupleConfig:
        return DecoupleConfig(
            partition=partition_ranges(self.timesteps, self.num_ranges),
            p=self.p,
            consistency_weight=self.consistency_weight,
            train=self.train_config(
                seed, iterations=self.finetune_iterations, lr=self.finetune_learning_rate
            ),
        )

    def sampler(self) -> SamplerKind:
        return SamplerKind(kind=self.sampler_kind, num_inference_steps=self.num_inference_steps)

    def grid_spec(self) -> GridSpec:
        values = None
        if self.grid_values is not None:
            values = tuple(tuple(self.grid_values) for _ in range(self.num_ranges))
        return GridSpec(
            values=values,
            coarse_min=self.coarse_min,
            coarse_max=self.coarse_max,
            coarse_step=self.coarse_step,
            refine_radius=self.refine_radius,
            fine_step=self.fine_step,
            samples_per_eval=self.search_samples,
        )

    def landscape_t_range(self) -> tuple[int, int] | None:
        if self.landscape_t_lo < 0 or self.landscape_t_hi < 0:
            return None
        return (self.landscape_t_lo, self.landscape_t_hi)

    def canonical_text(self) -> str:
        lines = []
        for key, (field_name, _) in sorted(KEY_MAP.items()):
            value = getattr(self, field_name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


# dotted config key -> (field name, parser)
KEY_MAP: dict[str, tuple[str, callable]] = {
    "seed": ("seed", int),
    "dataset.kind": ("dataset_kind", str),
    "dataset.size": ("dataset_size", int),
    "schedule.timesteps": ("timesteps", int),
    "schedule.beta_start": ("beta_start", _parse_opt_float),
    "schedule.beta_end": ("beta_end", _parse_opt_float),
    "model.data_dim": ("data_dim", int),
    "model.hidden_dims": ("hidden_dims", _parse_int_list),
    "model.time_embed_dim": ("time_embed_dim", int),
    "train.batch_size": ("train_batch_size", int),
    "train.iterations": ("train_iterations", int),
    "train.learning_rate": ("learning_rate", float),
    "train.optimizer": ("optimizer", str),
    "train.strategy": ("strategy", str),
    "train.gamma": ("strategy_gamma", float),
    "train.k": ("strategy_k", float),
    "train.target": ("target", str),
    "decouple.num_ranges": ("num_ranges", int),
    "decouple.p": ("p", float),
    "decouple.iterations": ("finetune_iterations", int),
    "decouple.learning_rate": ("finetune_learning_rate", float),
    "decouple.consistency_weight": ("consistency_weight", float),
    "decouple.use_projection": ("use_projection", _parse_bool),
    "sampler.kind": ("sampler_kind", str),
    "sampler.num_inference_steps": ("num_inference_steps", int),
    "merge.grid_values": ("grid_values", _parse_float_list),
    "merge.coarse_min": ("coarse_min", float),
    "merge.coarse_max": ("coarse_max", float),
    "merge.coarse_step": ("coarse_step", float),
    "merge.refine_radius": ("refine_radius", _parse_opt_float),
    "merge.fine_step": ("fine_step", float),
    "merge.search_samples": ("search_samples", int),
    "metric.projections": ("metric_projections", int),
    "metric.samples": ("metric_samples", int),
    "probe.buckets": ("probe_buckets", int),
    "probe.samples": ("probe_samples", int),
    "landscape.resolution": ("landscape_resolution", int),
    "landscape.extent": ("landscape_extent", float),
    "landscape.samples": ("landscape_samples", int),
    "landscape.t_lo": ("landscape_t_lo", int),
    "landscape.t_hi": ("landscape_t_hi", int),
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def apply_overrides(config: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
    updates = {}
    for key, raw in overrides.items():
        if key not in KEY_MAP:
            raise ConfigurationError(f"unknown config key {key!r}")
        field_name, parser = KEY_MAP[key]
        try:
            updates[field_name] = parser(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"bad value for {key!r}: {raw!r} ({exc})") from exc
    return replace(config, **updates)


def load_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Defaults, then file values, then explicit overrides."""
    config = ExperimentConfig()
    if path is not None:
        config = apply_overrides(config, parse_config_text(Path(path).read_text()))
    if overrides:
        config = apply_overrides(config, overrides)
    return config


# keep dataclass fields and KEY_MAP in sync
_mapped = {f for f, _ in KEY_MAP.values()}
_actual = {f.name for f in fields(ExperimentConfig)}
assert _mapped == _actual, f"KEY_MAP out of sync: {_mapped ^ _actual}"
