"""Task vectors, parameter-space merging, grid search, and ensemble inference.

A task vector is the parameter difference between a finetuned specialist
and its base model.  Merging adds a weighted sum of task vectors back onto
the base; the timestep-wise ensemble instead dispatches each reverse step
to the specialist whose range contains the step's timestep.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import Array
from .decoupled import RangePartition
from .denoiser import DenoiserConfig, denoiser_forward
from .errors import AlignmentError, ConfigurationError, EvaluationError
from .params import ParamSet, require_alignment
from .schedule import NoiseSchedule, SamplerKind, sample_loop

logger = logging.getLogger(__name__)

MergeWeights = tuple[float, ...]


@dataclass(frozen=True)
class TaskVector:
    """Per-parameter difference finetuned - base for one timestep range.

    ``finetuned`` keeps the exact endpoint the difference was formed from,
    which lets :func:`merge` reproduce it bitwise under a one-hot weight
    (floating-point subtraction does not round-trip on its own).
    """

    entries: ParamSet
    source_range: int
    finetuned: ParamSet | None = None


def task_vector(base: ParamSet, finetuned: ParamSet, source_range: int) -> TaskVector:
    """Elementwise difference finetuned - base, aligned by name and shape."""
    require_alignment(base, finetuned, "task_vector")
    entries = ParamSet({name: finetuned[name] - base[name] for name, _ in base.items()})
    return TaskVector(entries=entries, source_range=source_range, finetuned=finetuned.copy())


def merge(base: ParamSet, task_vectors: list[TaskVector], weights) -> ParamSet:
    """base + sum_i w_i * tau_i, evaluated as the equivalent affine combination.

    Writing the sum as (1 - sum w) * base + sum w_i * finetuned_i (with
    exactly-zero coefficients skipped) makes the merge identities exact:
    all-zero weights return the base bitwise and a one-hot weight returns
    the corresponding finetuned model bitwise.  Vectors lacking a stored
    finetuned endpoint fall back to base + w * tau for their term.
    """
    weights = tuple(float(w) for w in weights)
    if len(task_vectors) != len(weights):
        raise AlignmentError(
            f"merge: {len(task_vectors)} task vectors but {len(weights)} weights"
        )
    if not all(math.isfinite(w) for w in weights):
        raise ConfigurationError(f"merge weights must be finite, got {weights}")
    for tv in task_vectors:
        require_alignment(base, tv.entries, f"merge (task vector {tv.source_range})")

    base_coef = 1.0 - sum(weights)
    out = {}
    for name, b in base.items():
        acc = None
        if base_coef != 0.0:
            acc = base_coef * b
        for tv, w in zip(task_vectors, weights):
            if w == 0.0:
                continue
            term = w * tv.finetuned[name] if tv.finetuned is not None else w * (b + tv.entries[name])
            acc = term if acc is None else acc + term
        out[name] = b.copy() if acc is None else acc
    return ParamSet(out)


def ensemble_select(t: int, partition: RangePartition) -> int:
    """Index of the specialist owning timestep t: floor(t*N/T), clamped."""
    t = int(t)
    if not 0 <= t < partition.T:
        raise ConfigurationError(f"timestep {t} outside [0, {partition.T})")
    return min(t * partition.N // partition.T, partition.N - 1)


def piecewise_weight(t: int, partition: RangePartition, weights) -> float:
    """The merge weight of the unique range containing t (a step function of t)."""
    weights = tuple(float(w) for w in weights)
    if len(weights) != partition.N:
        raise AlignmentError(f"expected {partition.N} weights, got {len(weights)}")
    return weights[ensemble_select(t, partition)]


def ensemble_sample_loop(
    models: list[ParamSet],
    config: DenoiserConfig,
    partition: RangePartition,
    sched: NoiseSchedule,
    sampler: SamplerKind,
    n: int,
    seed: int,
) -> Array:
    """Sample with per-timestep dispatch to the specialist owning each step.

    With N identical models this reproduces the single-model loop bitwise
    (the random draws are shared).
    """
    if len(models) != partition.N:
        raise ConfigurationError(
            f"ensemble needs {partition.N} models, got {len(models)}"
        )
    if partition.T != sched.T:
        raise ConfigurationError(
            f"partition is over T={partition.T} but schedule has T={sched.T}"
        )

    def dispatch(x, t):
        return denoiser_forward(models[ensemble_select(t, partition)], x, t, config)

    return sample_loop(dispatch, sched, sampler, n, config.data_dim, seed)


@dataclass(frozen=True)
class GridSpec:
    """Search grid over merge weights.

    Either ``values`` gives explicit per-weight candidate lists (searched
    exhaustively, no refinement), or the coarse range/step define a
    uniform coarse grid that is refined around its argmin with
    ``fine_step`` inside ``refine_radius`` (default: one coarse step).
    """

    values: tuple[tuple[float, ...], ...] | None = None
    coarse_min: float = 0.0
    coarse_max: float = 1.0
    coarse_step: float = 0.25
    refine_radius: float | None = None
    fine_step: float = 0.05
    objective: str = "sliced_wasserstein"
    samples_per_eval: int = 2000

    def __post_init__(self):
        if self.values is not None:
            if not self.values or any(len(v) == 0 for v in self.values):
                raise ConfigurationError("explicit grid value lists must be non-empty")
            return
        if not (self.coarse_step > 0 and self.fine_step > 0):
            raise ConfigurationError("grid steps must be positive")
        if self.coarse_max < self.coarse_min:
            raise ConfigurationError("coarse_max must be >= coarse_min")
        if self.fine_step > self.coarse_step:
            raise ConfigurationError("fine_step must not exceed coarse_step")

    def coarse_axes(self, num_weights: int) -> list[tuple[float, ...]]:
        if self.values is not None:
            if len(self.values) != num_weights:
                raise ConfigurationError(
                    f"grid lists {len(self.values)} weights but search needs {num_weights}"
                )
            return [tuple(float(x) for x in axis) for axis in self.values]
        axis = _float_range(self.coarse_min, self.coarse_max, self.coarse_step)
        return [axis] * num_weights

    def fine_axes(self, center: MergeWeights) -> list[tuple[float, ...]] | None:
        if self.values is not None:
            return None
        radius = self.coarse_step if self.refine_radius is None else self.refine_radius
        return [
            _float_range(
                max(self.coarse_min, w - radius), min(self.coarse_max, w + radius), self.fine_step
            )
            for w in center
        ]


def _float_range(lo: float, hi: float, step: float) -> tuple[float, ...]:
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return tuple(lo + k * step for k in range(count))


def grid_search(
    base: ParamSet,
    task_vectors: list[TaskVector],
    grid: GridSpec,
    eval_fn,
    threads: int = 1,
) -> tuple[MergeWeights, float, list[tuple[MergeWeights, float]]]:
    """Exhaustive coarse search plus local refinement; lower score wins.

    Returns (best weights, best score, full log of every point evaluated).
    Ties break toward the lexicographically smallest weight tuple; NaN
    scores are logged but disqualified.
    """
    axes = grid.coarse_axes(len(task_vectors))
    coarse_points = [tuple(p) for p in itertools.product(*axes)]
    log = _evaluate_points(base, task_vectors, coarse_points, eval_fn, threads)
    best_w, best_s = _argmin(log)

    fine = grid.fine_axes(best_w)
    if fine is not None:
        fine_points = [tuple(p) for p in itertools.product(*fine)]
        log.extend(_evaluate_points(base, task_vectors, fine_points, eval_fn, threads))
        best_w, best_s = _argmin(log)
    return best_w, best_s, log


def _evaluate_points(base, task_vectors, points, eval_fn, threads):
    def one(w: MergeWeights) -> float:
        try:
            return float(eval_fn(merge(base, task_vectors, w)))
        except Exception as exc:  # noqa: BLE001 - context added, then re-raised
            raise EvaluationError(f"objective failed at weights {w}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(one, points))
    else:
        scores = [one(w) for w in points]
    return list(zip(points, scores))


def _argmin(log):
    best = None
    for w, s in log:
        if math.isnan(s):
            logger.warning("grid point %s scored NaN; disqualified", w)
            continue
        if best is None or s < best[1] or (s == best[1] and w < best[0]):
            best = (w, s)
    if best is None:
        raise EvaluationError("every grid point scored NaN")
    return best
