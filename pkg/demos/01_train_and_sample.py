"""Train a small denoiser on the eight-Gaussian ring and draw samples.

Walks the basic loop: noise schedule -> forward corruption -> training ->
reverse-process sampling -> sample-quality metric.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from diffmerge import (
    DenoiserConfig,
    SamplerKind,
    TrainConfig,
    denoiser_forward,
    gaussian_mixture_ring,
    init_params,
    make_linear_schedule,
    q_sample,
    sample_loop,
    sliced_wasserstein,
    train,
)

# The chain: 100 steps, linear betas rescaled from the 1000-step convention.
sched = make_linear_schedule(T=100)
print(f"schedule: T={sched.T}, beta {sched.beta[0]:.4g}..{sched.beta[-1]:.4g}, "
      f"terminal abar {sched.alpha_bar[-1]:.3g}")

data = gaussian_mixture_ring(4000, seed=0)

# What the forward process does to the data at a few timesteps.
rng = np.random.default_rng(1)
fig, axes = plt.subplots(1, 4, figsize=(12, 3))
for ax, t in zip(axes, [0, 30, 60, 99]):
    noisy = q_sample(data[:800], t, rng.standard_normal((800, 2)), sched)
    ax.scatter(noisy[:, 0], noisy[:, 1], s=2)
    ax.set_title(f"t={t}")
    ax.set_xlim(-3.5, 3.5)
    ax.set_ylim(-3.5, 3.5)
fig.tight_layout()
fig.savefig("demo01_forward_process.png", dpi=120)
print("wrote demo01_forward_process.png")

# Train the noise predictor.
config = DenoiserConfig(data_dim=2, hidden_dims=(64, 64, 64), time_embed_dim=32)
params = init_params(config, seed=0)
params, trace = train(
    params, config, data,
    TrainConfig(batch_size=64, num_iterations=4000, learning_rate=1e-3, seed=0),
    sched,
)
print(f"training loss: {np.mean(trace[:200]):.3f} (start) -> {np.mean(trace[-200:]):.3f} (end)")

# Sample with the deterministic 50-step sampler and score the result.
model = lambda x, t: denoiser_forward(params, x, t, config)
samples = sample_loop(model, sched, SamplerKind("ddim_deterministic", 50), 4000, 2, seed=2)
score = sliced_wasserstein(samples, data, num_projections=128, seed=3)
print(f"sliced Wasserstein distance to data: {score:.4f}")

fig, axes = plt.subplots(1, 2, figsize=(8, 4))
axes[0].scatter(data[:2000, 0], data[:2000, 1], s=2)
axes[0].set_title("data")
axes[1].scatter(samples[:2000, 0], samples[:2000, 1], s=2)
axes[1].set_title("samples")
for ax in axes:
    ax.set_xlim(-1.8, 1.8)
    ax.set_ylim(-1.8, 1.8)
fig.tight_layout()
fig.savefig("demo01_samples.png", dpi=120)
print("wrote demo01_samples.png")
