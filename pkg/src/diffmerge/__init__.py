"""Desk-scale diffusion training lab.

Train a small denoiser on synthetic 2-D data, probe gradient conflict
between timesteps, finetune per-timestep-range specialists (with an
anchoring consistency loss, probabilistic timestep sampling, and
channel-wise projections), then collapse the specialists back into one
model by task-vector merging with a grid search over merge weights.
"""

from .analysis import (
    EvalBatch,
    LandscapeGrid,
    PlaneBasis,
    eval_loss,
    gradient_magnitude_proxy,
    landscape_grid,
    make_eval_batch,
    orthonormal_plane_basis,
    sliced_wasserstein,
    tv_statistics,
)
from .autodiff import Graph, Node, as_tensor
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config, subseed
from .datasets import gaussian_mixture_ring, make_dataset, swiss_roll_2d, two_moons
from .decoupled import (
    DecoupleConfig,
    RangePartition,
    consistency_loss,
    decoupled_loss,
    decoupled_loss_components,
    finetune_range,
    partition_ranges,
    sample_timestep,
    sample_timesteps,
)
from .denoiser import (
    DenoiserConfig,
    augment_with_projections,
    denoiser_forward,
    init_params,
    projection_param_fraction,
    with_projections,
)
from .errors import (
    AlignmentError,
    ConfigurationError,
    ContractError,
    DegeneracyError,
    DiffmergeError,
    DimensionError,
    EvaluationError,
    TimestepError,
    TrainingFailure,
)
from .merging import (
    GridSpec,
    TaskVector,
    ensemble_sample_loop,
    ensemble_select,
    grid_search,
    merge,
    piecewise_weight,
    task_vector,
)
from .params import OptimizerState, ParamSet, optimizer_step
from .schedule import (
    NoiseSchedule,
    SamplerKind,
    ddim_step,
    ddpm_step,
    make_linear_schedule,
    q_sample,
    sample_loop,
)
from .training import (
    ReweightStrategy,
    TrainConfig,
    cosine_similarity_matrix,
    diffusion_loss,
    effective_weight,
    gradient_similarity_matrix,
    loss_weight,
    make_target,
    prediction_loss,
    prediction_loss_value,
    recover_x0,
    to_eps_prediction,
    train,
)

__version__ = "0.1.0"
