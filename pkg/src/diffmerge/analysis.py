"""Diagnostics: loss-landscape plane slices, task-vector geometry, and the
sliced Wasserstein distance used as the desk-scale sample-quality metric.

Landscape evaluation freezes one batch of (x0, t, eps) draws and reuses it
at every grid point, so the surface reflects parameter changes only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from .autodiff import Array, as_tensor
from .denoiser import DenoiserConfig
from .errors import ContractError, DegeneracyError, DimensionError
from .merging import TaskVector
from .params import ParamSet
from .schedule import NoiseSchedule
from .training import cosine_similarity_matrix, prediction_loss_value


def _flat(v) -> Array:
    if isinstance(v, TaskVector):
        return v.entries.flatten()
    if isinstance(v, ParamSet):
        return v.flatten()
    return np.ravel(np.asarray(v, dtype=np.float64))


@dataclass(frozen=True)
class PlaneBasis:
    """Orthonormal 2-D slice of parameter space anchored at ``origin``."""

    origin: ParamSet
    u1: Array
    u2: Array

    def point(self, a: float, b: float) -> ParamSet:
        """Parameters at origin + a*u1 + b*u2."""
        flat = self.origin.flatten()
        if a != 0.0:
            flat = flat + a * self.u1
        if b != 0.0:
            flat = flat + b * self.u2
        return self.origin.unflatten(flat)


def orthonormal_plane_basis(origin: ParamSet, tau1, tau2) -> PlaneBasis:
    """Gram-Schmidt basis of the plane spanned by two direction vectors.

    Directions may be task vectors, parameter sets, or flat arrays; they
    must be nonzero and make an angle above 1e-6 radians.
    """
    v1, v2 = _flat(tau1), _flat(tau2)
    if v1.shape != v2.shape or v1.size != origin.total_dim:
        raise DimensionError(
            f"direction sizes {v1.size}, {v2.size} must equal origin dim {origin.total_dim}"
        )
    n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
    if n1 == 0.0 or n2 == 0.0:
        raise DegeneracyError("plane directions must be nonzero")
    u1 = v1 / n1
    w = v2 - (v2 @ u1) * u1
    # ||w|| / ||v2|| = sin(angle between the directions)
    if np.linalg.norm(w) / n2 <= 1e-6:
        raise DegeneracyError("plane directions are (anti)parallel")
    return PlaneBasis(origin=origin, u1=u1, u2=w / np.linalg.norm(w))


@dataclass(frozen=True)
class EvalBatch:
    """Frozen (x0, t, eps) draws for reproducible loss evaluation."""

    x0: Array
    t: Array
    eps: Array


def make_eval_batch(
    dataset: Array,
    sched: NoiseSchedule,
    n: int,
    t_range: tuple[int, int] | None = None,
    seed: int = 0,
) -> EvalBatch:
    dataset = as_tensor(dataset)
    if dataset.size == 0 or n < 1:
        raise ContractError("make_eval_batch requires data and n >= 1")
    lo, hi = (0, sched.T) if t_range is None else t_range
    if not 0 <= lo < hi <= sched.T:
        raise ContractError(f"invalid timestep range [{lo}, {hi}) for T={sched.T}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, dataset.shape[0], size=n)
    t = rng.integers(lo, hi, size=n)
    eps = rng.standard_normal((n, dataset.shape[1]))
    return EvalBatch(x0=dataset[idx], t=t, eps=eps)


def eval_loss(params: ParamSet, config: DenoiserConfig, batch: EvalBatch, sched: NoiseSchedule) -> float:
    """Mean noise-prediction squared error on a frozen batch."""
    return prediction_loss_value(params, config, batch.x0, batch.t, batch.eps, sched)


@dataclass(frozen=True)
class LandscapeGrid:
    """Loss values over a plane slice; values[i, j] is at (a_values[i], b_values[j])."""

    a_values: Array
    b_values: Array
    values: Array
    t_range: tuple[int, int] | None


def landscape_grid(
    basis: PlaneBasis,
    config: DenoiserConfig,
    dataset: Array,
    sched: NoiseSchedule,
    t_range: tuple[int, int] | None = None,
    resolution: int = 9,
    extent: float = 1.0,
    eval_samples: int = 256,
    seed: int = 0,
) -> LandscapeGrid:
    """Loss over a (2*extent)-wide square of the slice plane.

    One evaluation batch is drawn once (timesteps restricted to
    ``t_range`` when given) and shared by every grid point; non-finite
    evaluations are recorded as +inf rather than aborting the sweep.
    """
    if resolution < 2:
        raise ContractError("resolution must be >= 2")
    batch = make_eval_batch(dataset, sched, eval_samples, t_range=t_range, seed=seed)
    a_values = np.linspace(-extent, extent, resolution)
    b_values = np.linspace(-extent, extent, resolution)
    values = np.empty((resolution, resolution))
    for i, a in enumerate(a_values):
        for j, b in enumerate(b_values):
            v = eval_loss(basis.point(float(a), float(b)), config, batch, sched)
            values[i, j] = v if np.isfinite(v) else np.inf
    return LandscapeGrid(a_values=a_values, b_values=b_values, values=values, t_range=t_range)


def gradient_magnitude_proxy(grid: LandscapeGrid) -> float:
    """Mean central-difference gradient magnitude over interior grid points."""
    v = grid.values
    if v.shape[0] < 3 or v.shape[1] < 3:
        raise ContractError("gradient proxy needs a grid of at least 3x3")
    da = grid.a_values[1] - grid.a_values[0]
    db = grid.b_values[1] - grid.b_values[0]
    ga = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * da)
    gb = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * db)
    return float(np.mean(np.hypot(ga, gb)))


def tv_statistics(task_vectors: list[TaskVector]):
    """Per-layer magnitude summaries and the pairwise cosine matrix.

    Returns (stats, cosine) where stats[k][name] holds min/median/max/mean
    of |entries| for vector k's parameter ``name``.
    """
    if not task_vectors:
        raise ContractError("tv_statistics requires at least one task vector")
    stats = []
    for tv in task_vectors:
        per_name = {}
        for name, arr in tv.entries.items():
            mag = np.abs(arr)
            per_name[name] = {
                "min": float(mag.min()),
                "median": float(np.median(mag)),
                "max": float(mag.max()),
                "mean": float(mag.mean()),
            }
        stats.append(per_name)
    cosine = cosine_similarity_matrix([tv.entries.flatten() for tv in task_vectors])
    return stats, cosine


def sliced_wasserstein(a: Array, b: Array, num_projections: int = 128, seed: int = 0) -> float:
    """Mean 1-D Wasserstein-1 distance over random unit projections.

    Symmetric, non-negative, zero on identical sample sets, deterministic
    given ``seed``.  Sample counts may differ between a and b.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"sample sets must share columns, got {a.shape} and {b.shape}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ContractError("need at least 2 samples on each side")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((num_projections, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    proj_a = a @ dirs.T
    proj_b = b @ dirs.T
    total = 0.0
    for k in range(num_projections):
        total += wasserstein_distance(proj_a[:, k], proj_b[:, k])
    return total / num_projections
