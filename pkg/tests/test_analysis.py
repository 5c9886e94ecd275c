import numpy as np
import pytest

from diffmerge import (
    ContractError,
    DegeneracyError,
    DenoiserConfig,
    DimensionError,
    ParamSet,
    eval_loss,
    gradient_magnitude_proxy,
    init_params,
    landscape_grid,
    make_eval_batch,
    make_linear_schedule,
    orthonormal_plane_basis,
    sliced_wasserstein,
    task_vector,
    tv_statistics,
)

SMALL = DenoiserConfig(data_dim=2, hidden_dims=(8, 8), time_embed_dim=6)


class TestPlaneBasis:
    def test_orthogonal_inputs_stay_put(self):
        origin = ParamSet({"a": np.zeros(4)})
        t1 = np.array([2.0, 0.0, 0.0, 0.0])
        t2 = np.array([0.0, 0.0, 3.0, 0.0])
        basis = orthonormal_plane_basis(origin, t1, t2)
        np.testing.assert_allclose(basis.u1, t1 / 2.0, atol=1e-15)
        np.testing.assert_allclose(basis.u2, t2 / 3.0, atol=1e-15)

    def test_parallel_vectors_rejected(self, rng):
        origin = ParamSet({"a": np.zeros(6)})
        v = rng.standard_normal(6)
        with pytest.raises(DegeneracyError):
            orthonormal_plane_basis(origin, v, 2.0 * v)
        with pytest.raises(DegeneracyError):
            orthonormal_plane_basis(origin, v, np.zeros(6))

    def test_gram_matrix_is_identity(self, rng):
        origin = ParamSet({"a": np.zeros((10, 10))})
        basis = orthonormal_plane_basis(
            origin, rng.standard_normal(100), rng.standard_normal(100)
        )
        u = np.stack([basis.u1, basis.u2])
        np.testing.assert_allclose(u @ u.T, np.eye(2), atol=1e-10)

    def test_size_mismatch(self, rng):
        origin = ParamSet({"a": np.zeros(4)})
        with pytest.raises(DimensionError):
            orthonormal_plane_basis(origin, rng.standard_normal(5), rng.standard_normal(5))


class TestLandscapeGrid:
    def _setup(self, rng):
        sched = make_linear_schedule(20)
        params = init_params(SMALL, seed=0)
        dataset = rng.standard_normal((200, 2))
        basis = orthonormal_plane_basis(
            params,
            np.random.default_rng(1).standard_normal(params.total_dim),
            np.random.default_rng(2).standard_normal(params.total_dim),
        )
        return sched, params, dataset, basis

    def test_origin_cell_equals_direct_loss(self, rng):
        sched, params, dataset, basis = self._setup(rng)
        grid = landscape_grid(basis, SMALL, dataset, sched, resolution=5, extent=0.5, seed=3)
        batch = make_eval_batch(dataset, sched, 256, seed=3)
        assert grid.values[2, 2] == eval_loss(params, SMALL, batch, sched)

    def test_point_along_direction_reproduces_displaced_model(self, rng):
        sched, params, dataset, _ = self._setup(rng)
        tuned = ParamSet({n: v + 0.1 * rng.standard_normal(v.shape) for n, v in params.items()})
        other = ParamSet({n: v + 0.1 * rng.standard_normal(v.shape) for n, v in params.items()})
        tau1 = task_vector(params, tuned, 0)
        tau2 = task_vector(params, other, 1)
        basis = orthonormal_plane_basis(params, tau1, tau2)
        norm1 = np.linalg.norm(tau1.entries.flatten())
        batch = make_eval_batch(dataset, sched, 128, seed=9)
        at_tuned = eval_loss(basis.point(norm1, 0.0), SMALL, batch, sched)
        direct = eval_loss(tuned, SMALL, batch, sched)
        assert abs(at_tuned - direct) < 1e-10

    def test_t_range_restriction_and_shape(self, rng):
        sched, params, dataset, basis = self._setup(rng)
        grid = landscape_grid(
            basis, SMALL, dataset, sched, t_range=(0, 5), resolution=4, extent=0.3, seed=0
        )
        assert grid.values.shape == (4, 4)
        assert grid.t_range == (0, 5)
        assert np.all(np.isfinite(grid.values))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_evaluations_flagged_as_inf(self, rng):
        sched, params, dataset, basis = self._setup(rng)
        grid = landscape_grid(basis, SMALL, dataset, sched, resolution=3, extent=1e200, seed=0)
        assert np.all(np.isinf(grid.values) | np.isfinite(grid.values))
        assert np.any(np.isinf(grid.values))
        assert np.isfinite(grid.values[1, 1])  # origin still evaluates

    def test_gradient_proxy_positive_on_slope(self):
        grid_vals = np.add.outer(np.linspace(0, 1, 5), np.linspace(0, 2, 5))
        from diffmerge import LandscapeGrid

        grid = LandscapeGrid(
            a_values=np.linspace(-1, 1, 5),
            b_values=np.linspace(-1, 1, 5),
            values=grid_vals,
            t_range=None,
        )
        assert gradient_magnitude_proxy(grid) > 0


class TestTvStatistics:
    def test_cosine_identity_and_negation(self, rng):
        base = init_params(SMALL, seed=1)
        tuned = ParamSet({n: v + rng.standard_normal(v.shape) for n, v in base.items()})
        tv = task_vector(base, tuned, 0)
        neg = task_vector(tuned, base, 1)  # exactly the negation
        _, cos = tv_statistics([tv, neg])
        assert cos[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert cos[0, 1] == pytest.approx(-1.0, abs=1e-12)
        np.testing.assert_array_equal(cos, cos.T)

    def test_stats_match_manual_oracle(self, rng):
        base = init_params(SMALL, seed=2)
        tuned = ParamSet({n: v + rng.standard_normal(v.shape) for n, v in base.items()})
        tv = task_vector(base, tuned, 0)
        stats, _ = tv_statistics([tv])
        for name, arr in tv.entries.items():
            mag = np.abs(arr)
            s = stats[0][name]
            assert s["min"] == mag.min()
            assert s["max"] == mag.max()
            assert s["mean"] == pytest.approx(mag.mean(), rel=1e-12)
            assert s["median"] == pytest.approx(np.median(mag), rel=1e-12)

    def test_requires_at_least_one_vector(self):
        with pytest.raises(ContractError):
            tv_statistics([])


class TestSlicedWasserstein:
    def test_identical_sets_give_zero(self, rng):
        a = rng.standard_normal((500, 2))
        assert sliced_wasserstein(a, a.copy(), 32, seed=0) == 0.0

    def test_shifted_gaussian_analytic_value(self, rng):
        # mean |<(3,0), u>| over random unit u in 2-D is 2*3/pi
        n = 10_000
        a = rng.standard_normal((n, 2))
        b = rng.standard_normal((n, 2)) + np.array([3.0, 0.0])
        d = sliced_wasserstein(a, b, 128, seed=1)
        expected = 2.0 * 3.0 / np.pi
        assert abs(d - expected) / expected < 0.10

    def test_symmetry_under_same_seed(self, rng):
        a = rng.standard_normal((300, 2))
        b = rng.standard_normal((400, 2)) + 0.5
        assert sliced_wasserstein(a, b, 64, seed=7) == pytest.approx(
            sliced_wasserstein(b, a, 64, seed=7), rel=1e-12
        )

    def test_nonnegative_and_positive_for_disjoint_clusters(self, rng):
        a = rng.standard_normal((200, 2)) * 0.1
        b = rng.standard_normal((200, 2)) * 0.1 + 5.0
        assert sliced_wasserstein(a, b, 32, seed=0) > 0

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionError):
            sliced_wasserstein(rng.standard_normal((10, 2)), rng.standard_normal((10, 3)))

    def test_minimum_rows(self, rng):
        with pytest.raises(ContractError):
            sliced_wasserstein(rng.standard_normal((1, 2)), rng.standard_normal((10, 2)))

    def test_deterministic_given_seed(self, rng):
        a = rng.standard_normal((100, 2))
        b = rng.standard_normal((100, 2))
        assert sliced_wasserstein(a, b, 16, seed=5) == sliced_wasserstein(a, b, 16, seed=5)
