"""Finetune per-timestep-range specialists from one pretrained model.

Each specialist trains mostly on its own quarter of the chain (with a
small probability of seeing the full range), anchored to the pretrained
model's predictions by a consistency penalty, and carries channel-wise
projection matrices initialized to the identity.
"""

import numpy as np

from diffmerge import (
    DecoupleConfig,
    DenoiserConfig,
    TrainConfig,
    augment_with_projections,
    eval_loss,
    finetune_range,
    gaussian_mixture_ring,
    init_params,
    make_eval_batch,
    make_linear_schedule,
    partition_ranges,
    sample_timesteps,
    train,
    with_projections,
)

T = 100
sched = make_linear_schedule(T)
partition = partition_ranges(T, 4)
print("timestep ranges:", partition.ranges)

# The probabilistic draw: mostly in-range, sometimes anywhere.
config_p = DecoupleConfig(partition=partition, p=0.3, train=TrainConfig(num_iterations=0))
rng = np.random.default_rng(0)
draws = sample_timesteps(1, config_p, rng, 100_000)
lo, hi = partition.ranges[1]
in_range = np.mean((draws >= lo) & (draws < hi))
print(f"specialist 1 sees its own range {lo}..{hi - 1} in {in_range:.1%} of draws "
      f"(expected {(1 - 0.3) + 0.3 * (hi - lo) / T:.1%})")

# Pretrain, then finetune all four specialists.
data = gaussian_mixture_ring(4000, seed=0)
heldout = gaussian_mixture_ring(2000, seed=1234)
arch = DenoiserConfig(data_dim=2, hidden_dims=(64, 64, 64), time_embed_dim=32)
arch_proj = with_projections(arch)

pretrained, _ = train(
    init_params(arch, seed=0), arch, data,
    TrainConfig(batch_size=64, num_iterations=4000, learning_rate=1e-3, seed=0),
    sched,
)
base = augment_with_projections(pretrained, arch_proj)
print(f"added identity projections: {pretrained.total_dim} -> {base.total_dim} parameters")

print(f"{'range':<12} {'pretrained':>11} {'specialist':>11}")
for i, (lo, hi) in enumerate(partition.ranges):
    dcfg = DecoupleConfig(
        partition=partition, p=0.3, consistency_weight=1.0,
        train=TrainConfig(batch_size=64, num_iterations=1200, learning_rate=3e-4, seed=i),
    )
    specialist, _ = finetune_range(base, i, arch_proj, data, dcfg, sched)
    batch = make_eval_batch(heldout, sched, 4000, (lo, hi), seed=50 + i)
    before = eval_loss(base, arch_proj, batch, sched)
    after = eval_loss(specialist, arch_proj, batch, sched)
    print(f"[{lo:3d},{hi:3d})   {before:11.4f} {after:11.4f}")
