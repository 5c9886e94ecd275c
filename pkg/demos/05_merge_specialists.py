"""Collapse four range specialists back into one model by task-vector merging.

Compares three ways to use the specialists: the pretrained model alone,
the timestep-dispatched ensemble, and a single merged model whose merge
weights come from a grid search against the sample-quality metric.
"""

import numpy as np

from diffmerge import (
    DecoupleConfig,
    DenoiserConfig,
    GridSpec,
    SamplerKind,
    TrainConfig,
    augment_with_projections,
    denoiser_forward,
    ensemble_sample_loop,
    finetune_range,
    gaussian_mixture_ring,
    grid_search,
    init_params,
    make_linear_schedule,
    merge,
    partition_ranges,
    sample_loop,
    sliced_wasserstein,
    task_vector,
    train,
    tv_statistics,
    with_projections,
)

T = 100
sched = make_linear_schedule(T)
partition = partition_ranges(T, 4)
data = gaussian_mixture_ring(4000, seed=0)
arch = DenoiserConfig(data_dim=2, hidden_dims=(64, 64, 64), time_embed_dim=32)
arch_proj = with_projections(arch)

pretrained, _ = train(
    init_params(arch, seed=0), arch, data,
    TrainConfig(batch_size=64, num_iterations=4000, learning_rate=1e-3, seed=0),
    sched,
)
base = augment_with_projections(pretrained, arch_proj)

specialists = []
for i in range(4):
    dcfg = DecoupleConfig(
        partition=partition, p=0.3, consistency_weight=1.0,
        train=TrainConfig(batch_size=64, num_iterations=1200, learning_rate=3e-4, seed=i),
    )
    s, _ = finetune_range(base, i, arch_proj, data, dcfg, sched)
    specialists.append(s)

vectors = [task_vector(base, specialists[i], i) for i in range(4)]
stats, cosines = tv_statistics(vectors)
print("task-vector norms:", [f"{np.linalg.norm(v.entries.flatten()):.3f}" for v in vectors])
print("pairwise cosines:\n", np.round(cosines, 3))

sampler = SamplerKind("ddim_deterministic", 50)
def score(model_params, config):
    samples = sample_loop(
        lambda x, t: denoiser_forward(model_params, x, t, config),
        sched, sampler, 8000, 2, seed=10,
    )
    return sliced_wasserstein(samples, data, 128, seed=11)

sw_pre = score(base, arch_proj)
ens_samples = ensemble_sample_loop(specialists, arch_proj, partition, sched, sampler, 8000, seed=10)
sw_ens = sliced_wasserstein(ens_samples, data, 128, seed=11)

# Grid search over merge weights; each candidate merged model is scored
# by a cheaper sampling run.
search_sampler = SamplerKind("ddim_deterministic", 20)
def objective(candidate):
    samples = sample_loop(
        lambda x, t: denoiser_forward(candidate, x, t, arch_proj),
        sched, search_sampler, 512, 2, seed=20,
    )
    return sliced_wasserstein(samples, data, 96, seed=21)

grid = GridSpec(values=tuple((0.0, 0.5, 1.0) for _ in range(4)), samples_per_eval=512)
weights, best_score, log = grid_search(base, vectors, grid, objective, threads=4)
print(f"grid search: {len(log)} candidates, best weights {weights} (search score {best_score:.4f})")

merged = merge(base, vectors, weights)
sw_merged = score(merged, arch_proj)

print(f"sliced Wasserstein:  pretrained {sw_pre:.4f}   ensemble {sw_ens:.4f}   merged {sw_merged:.4f}")
