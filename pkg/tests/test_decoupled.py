import numpy as np
import pytest
from scipy.stats import chisquare

from diffmerge import (
    AlignmentError,
    ConfigurationError,
    ContractError,
    DecoupleConfig,
    DenoiserConfig,
    ParamSet,
    TrainConfig,
    augment_with_projections,
    consistency_loss,
    decoupled_loss,
    decoupled_loss_components,
    denoiser_forward,
    finetune_range,
    init_params,
    make_linear_schedule,
    partition_ranges,
    q_sample,
    sample_timestep,
    sample_timesteps,
    with_projections,
)

SMALL = DenoiserConfig(data_dim=2, hidden_dims=(8, 8), time_embed_dim=6)


def dcfg(T=100, N=4, p=0.4, iterations=0, seed=0, consistency_weight=1.0):
    return DecoupleConfig(
        partition=partition_ranges(T, N),
        p=p,
        consistency_weight=consistency_weight,
        train=TrainConfig(batch_size=8, num_iterations=iterations, seed=seed, learning_rate=1e-3),
    )


class TestPartition:
    def test_canonical_quarters(self):
        part = partition_ranges(1000, 4)
        assert part.ranges == ((0, 250), (250, 500), (500, 750), (750, 1000))

    def test_single_range(self):
        assert partition_ranges(17, 1).ranges == ((0, 17),)

    def test_non_divisible_boundaries_cover_disjointly(self):
        part = partition_ranges(10, 3)
        seen = [part.index_of(t) for t in range(10)]
        # every timestep in exactly one range, ranges contiguous ascending
        assert seen == sorted(seen)
        assert set(seen) == {0, 1, 2}
        assert sum(part.sizes()) == 10

    def test_exhaustive_cover_small(self):
        for T in range(1, 65):
            for N in range(1, T + 1):
                part = partition_ranges(T, N)
                counts = np.zeros(T, dtype=int)
                for lo, hi in part.ranges:
                    counts[lo:hi] += 1
                assert np.all(counts == 1), (T, N)
                assert all(hi > lo for lo, hi in part.ranges)

    def test_membership_consistent_with_dispatch_formula(self):
        # floor(t*N/T) must agree with containment for awkward (T, N) too
        for T, N in [(10, 3), (100, 7), (1000, 4), (97, 16)]:
            part = partition_ranges(T, N)
            for t in range(T):
                assert part.index_of(t) == min(t * N // T, N - 1)

    def test_invalid_configs(self):
        with pytest.raises(ConfigurationError):
            partition_ranges(4, 5)
        with pytest.raises(ConfigurationError):
            partition_ranges(4, 0)


class TestSampleTimesteps:
    def test_p_zero_stays_in_range(self):
        config = dcfg(T=100, N=4, p=0.0)
        rng = np.random.default_rng(0)
        draws = sample_timesteps(2, config, rng, 10_000)
        lo, hi = config.partition.ranges[2]
        assert draws.min() >= lo and draws.max() < hi

    def test_p_one_uniform_chi_square(self):
        config = dcfg(T=20, N=4, p=1.0)
        rng = np.random.default_rng(1)
        draws = sample_timesteps(0, config, rng, 100_000)
        counts = np.bincount(draws, minlength=20)
        assert chisquare(counts).pvalue > 0.01

    def test_mixture_frequency(self):
        # expected in-range mass = (1-p) + p * |range| / T
        config = dcfg(T=100, N=4, p=0.4)
        rng = np.random.default_rng(2)
        n = 100_000
        draws = sample_timesteps(1, config, rng, n)
        lo, hi = config.partition.ranges[1]
        freq = np.mean((draws >= lo) & (draws < hi))
        assert abs(freq - 0.7) < 0.01

    def test_mixture_law_uneven_partition_4_sigma(self):
        config = dcfg(T=10, N=3, p=0.5)
        rng = np.random.default_rng(3)
        n = 100_000
        for i, (lo, hi) in enumerate(config.partition.ranges):
            draws = sample_timesteps(i, config, rng, n)
            expected = (1 - 0.5) + 0.5 * (hi - lo) / 10
            sigma = np.sqrt(expected * (1 - expected) / n)
            freq = np.mean((draws >= lo) & (draws < hi))
            assert abs(freq - expected) < 4 * sigma

    def test_single_draw_in_domain(self):
        config = dcfg(T=50, N=5, p=0.3)
        rng = np.random.default_rng(4)
        t = sample_timestep(3, config, rng)
        assert 0 <= t < 50


class TestConsistencyLoss:
    def test_identical_networks_give_exact_zero(self, rng):
        params = init_params(SMALL, seed=0)
        x = rng.standard_normal((6, 2))
        loss = consistency_loss(params, params, SMALL, x, 3)
        assert float(loss.value) == 0.0

    def test_projection_transparency(self, rng):
        pconfig = with_projections(SMALL)
        teacher = init_params(SMALL, seed=1)
        student = augment_with_projections(teacher, pconfig)
        x = rng.standard_normal((6, 2))
        loss = consistency_loss(teacher, student, pconfig, x, 5)
        assert float(loss.value) == 0.0

    def test_perturbed_student_matches_two_forward_oracle(self, rng):
        teacher = init_params(SMALL, seed=2)
        student = ParamSet(
            {n: v + 0.05 * rng.standard_normal(v.shape) for n, v in teacher.items()}
        )
        x = rng.standard_normal((10, 2))
        t = rng.integers(0, 10, size=10)
        out_t = denoiser_forward(teacher, x, t, SMALL)
        out_s = denoiser_forward(student, x, t, SMALL)
        oracle = np.mean(np.sum((out_t - out_s) ** 2, axis=1))
        loss = consistency_loss(teacher, student, SMALL, x, t)
        assert abs(float(loss.value) - oracle) < 1e-10

    def test_gradient_at_teacher_equals_zero_exactly(self, rng):
        # stop-gradient semantics: at student == teacher the diff is zero,
        # so every student gradient is exactly zero (and the teacher is
        # never registered on the graph at all).
        params = init_params(SMALL, seed=3)
        x = rng.standard_normal((4, 2))
        loss = consistency_loss(params, params, SMALL, x, 2)
        loss.graph.backward(loss)
        grads = loss.graph.parameter_grads()
        assert set(grads) == set(params.names())
        for name, g in grads.items():
            np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_architecture_mismatch(self, rng):
        teacher = init_params(DenoiserConfig(data_dim=2, hidden_dims=(4,)), seed=0)
        student = init_params(SMALL, seed=0)
        with pytest.raises(AlignmentError):
            consistency_loss(teacher, student, SMALL, rng.standard_normal((2, 2)), 0)


class TestDecoupledLoss:
    def test_components_match_independent_terms(self, rng):
        sched = make_linear_schedule(40)
        teacher = init_params(SMALL, seed=4)
        student = ParamSet(
            {n: v + 0.02 * rng.standard_normal(v.shape) for n, v in teacher.items()}
        )
        x0 = rng.standard_normal((12, 2))
        t = rng.integers(0, 40, size=12)
        eps = rng.standard_normal((12, 2))
        denoise, consistency = decoupled_loss_components(
            teacher, student, SMALL, x0, t, eps, sched
        )
        x_t = q_sample(x0, t, eps, sched)
        pred = denoiser_forward(student, x_t, t, SMALL)
        anchor = denoiser_forward(teacher, x_t, t, SMALL)
        denoise_oracle = np.mean(np.sum((pred - eps) ** 2, axis=1))
        consistency_oracle = np.mean(np.sum((pred - anchor) ** 2, axis=1))
        assert abs(float(denoise.value) - denoise_oracle) < 1e-10
        assert abs(float(consistency.value) - consistency_oracle) < 1e-10

    def test_loss_equals_sum_of_components(self, rng):
        sched = make_linear_schedule(40)
        config = dcfg(T=40, N=4, p=0.3)
        teacher = init_params(SMALL, seed=5)
        student = ParamSet(
            {n: v + 0.02 * rng.standard_normal(v.shape) for n, v in teacher.items()}
        )
        batch = rng.standard_normal((10, 2))
        loss = decoupled_loss(
            teacher, student, SMALL, batch, 1, config, sched, np.random.default_rng(77)
        )
        # replay the same draws the loss made
        rng2 = np.random.default_rng(77)
        t = sample_timesteps(1, config, rng2, 10)
        eps = rng2.standard_normal((10, 2))
        denoise, consistency = decoupled_loss_components(
            teacher, student, SMALL, batch, t, eps, sched
        )
        expected = float(denoise.value) + 1.0 * float(consistency.value)
        assert abs(float(loss.value) - expected) < 1e-10

    def test_zero_consistency_weight_reduces_to_range_objective(self, rng):
        sched = make_linear_schedule(40)
        config = dcfg(T=40, N=4, p=0.0, consistency_weight=0.0)
        teacher = init_params(SMALL, seed=6)
        student = ParamSet(
            {n: v + 0.02 * rng.standard_normal(v.shape) for n, v in teacher.items()}
        )
        batch = rng.standard_normal((10, 2))
        loss = decoupled_loss(
            teacher, student, SMALL, batch, 2, config, sched, np.random.default_rng(5)
        )
        rng2 = np.random.default_rng(5)
        t = sample_timesteps(2, config, rng2, 10)
        eps = rng2.standard_normal((10, 2))
        denoise, _ = decoupled_loss_components(teacher, student, SMALL, batch, t, eps, sched)
        assert float(loss.value) == pytest.approx(float(denoise.value), rel=1e-12)

    def test_teacher_student_identical_and_exact_eps_zero(self, rng):
        sched = make_linear_schedule(40)
        config = dcfg(T=40, N=2, p=0.5)
        params = init_params(SMALL, seed=7)
        k_out = len(SMALL.hidden_dims)
        entries = {n: v.copy() for n, v in params.items()}
        entries[f"block{k_out}.weight"][:] = 0.0
        params = ParamSet(entries)
        x0 = rng.standard_normal((6, 2))
        t = rng.integers(0, 40, size=6)
        denoise, consistency = decoupled_loss_components(
            params, params, SMALL, x0, t, np.zeros_like(x0), sched
        )
        assert float(denoise.value) == 0.0
        assert float(consistency.value) == 0.0

    def test_empty_batch_rejected(self, rng):
        sched = make_linear_schedule(40)
        params = init_params(SMALL, seed=0)
        with pytest.raises(ContractError):
            decoupled_loss(
                params, params, SMALL, np.zeros((0, 2)), 0, dcfg(T=40), sched, rng
            )


class TestFinetuneRange:
    def test_zero_iterations_returns_base_bitwise(self, rng):
        sched = make_linear_schedule(100)
        pconfig = with_projections(SMALL)
        base = augment_with_projections(init_params(SMALL, seed=8), pconfig)
        dataset = rng.standard_normal((50, 2))
        tuned, trace = finetune_range(base, 0, pconfig, dataset, dcfg(iterations=0), sched)
        assert trace == []
        for name in base.names():
            np.testing.assert_array_equal(tuned[name], base[name])

    def test_traces_reproducible(self, rng):
        sched = make_linear_schedule(100)
        pconfig = with_projections(SMALL)
        base = augment_with_projections(init_params(SMALL, seed=9), pconfig)
        dataset = rng.standard_normal((80, 2))
        _, t1 = finetune_range(base, 1, pconfig, dataset, dcfg(iterations=20, seed=3), sched)
        _, t2 = finetune_range(base, 1, pconfig, dataset, dcfg(iterations=20, seed=3), sched)
        assert t1 == t2

    def test_unaugmented_base_with_projection_config_rejected(self, rng):
        sched = make_linear_schedule(100)
        pconfig = with_projections(SMALL)
        base = init_params(SMALL, seed=10)  # lacks projection entries
        with pytest.raises(AlignmentError):
            finetune_range(base, 0, pconfig, rng.standard_normal((10, 2)), dcfg(), sched)
