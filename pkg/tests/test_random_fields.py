"""Tests for covariances, KL bases, pixel fields and conditioning."""

import numpy as np
import pytest

from src.errors import FieldError
from src.random_fields import (
    ExpCovariance, Grid1D, Grid2D, PixelGRF, PointObservations, build_exp_covariance,
    condition_grf, kl_decompose, kl_to_log_field, matrix_sqrt, sample_pixel_grf,
)


@pytest.fixture
def small_grid():
    return Grid2D.square(6, length=30.0)


@pytest.fixture
def small_grf(small_grid):
    cov = build_exp_covariance(small_grid, ExpCovariance(1.0, 10.0, 2))
    return PixelGRF.from_covariance(0.0, cov)


class TestCovariance:

    def test_diagonal_is_variance(self):
        """Every cell has variance sigma^2."""
        cov = build_exp_covariance(Grid1D(), ExpCovariance(3.0, 0.3, 1))
        assert np.allclose(np.diag(cov), 9.0)

    def test_neighbour_value(self):
        """Cells one dx apart correlate as exp(-dx / l)."""
        grid = Grid1D(n_cells=10)
        cov = build_exp_covariance(grid, ExpCovariance(1.0, 0.5, 1))
        assert cov[0, 1] == pytest.approx(np.exp(-0.1 / 0.5))

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ValueError):
            build_exp_covariance(Grid1D(), ExpCovariance(1.0, 1.0, 2))

    def test_invalid_parameters_rejected(self):
        with pytest.raises(ValueError):
            ExpCovariance(sigma=0.0)
        with pytest.raises(ValueError):
            ExpCovariance(length_scale=-1.0)


class TestKL:

    def test_eigenvalues_nonincreasing(self):
        cov = build_exp_covariance(Grid1D(), ExpCovariance())
        basis = kl_decompose(cov, 10)
        assert basis.n_terms == 10
        assert np.all(np.diff(basis.eigenvalues) <= 0)
        assert np.all(basis.eigenvalues >= 0)

    def test_eigenfunctions_orthonormal(self):
        cov = build_exp_covariance(Grid1D(), ExpCovariance())
        basis = kl_decompose(cov, 10)
        gram = basis.eigenfunctions.T @ basis.eigenfunctions
        assert np.allclose(gram, np.eye(10), atol=1e-10)

    def test_full_expansion_reproduces_covariance(self):
        """With every mode kept the truncated covariance is the covariance."""
        grid = Grid1D(n_cells=12)
        cov = build_exp_covariance(grid, ExpCovariance())
        basis = kl_decompose(cov, grid.n_cells)
        assert np.allclose(basis.truncated_covariance(), cov, atol=1e-8)

    def test_zero_coefficients_give_mean(self):
        cov = build_exp_covariance(Grid1D(), ExpCovariance())
        basis = kl_decompose(cov, 10, mean_log=np.log(1e-5))
        field = kl_to_log_field(basis, np.zeros(10))
        assert np.allclose(field, np.log(1e-5))

    def test_wrong_coefficient_count_raises(self):
        cov = build_exp_covariance(Grid1D(), ExpCovariance())
        basis = kl_decompose(cov, 10)
        with pytest.raises(ValueError):
            kl_to_log_field(basis, np.zeros(9))

    def test_invalid_term_count_raises(self):
        cov = build_exp_covariance(Grid1D(n_cells=5), ExpCovariance())
        with pytest.raises(ValueError):
            kl_decompose(cov, 6)


class TestPixelField:

    def test_matrix_sqrt_squares_back(self, small_grf):
        root = small_grf.covariance_root
        assert np.allclose(root @ root, small_grf.covariance, atol=1e-8)

    def test_matrix_sqrt_clamps_negative_eigenvalues(self):
        root = matrix_sqrt(np.array([[1.0, 0.0], [0.0, -1e-12]]))
        assert np.all(np.isfinite(root))

    def test_sample_is_affine_in_latent(self, small_grf):
        z = np.random.default_rng(0).standard_normal(small_grf.dimension)
        assert np.allclose(sample_pixel_grf(small_grf, z),
                           small_grf.mean_vector + small_grf.covariance_root @ z)
        assert np.allclose(sample_pixel_grf(small_grf, np.zeros(small_grf.dimension)),
                           small_grf.mean_vector)

    def test_empirical_variance(self, small_grf):
        """Sample variance of 4000 draws matches the prior variance within 10%."""
        rng = np.random.default_rng(5)
        draws = np.array([sample_pixel_grf(small_grf, rng.standard_normal(small_grf.dimension))
                          for _ in range(4000)])
        assert np.allclose(draws.var(axis=0), 1.0, rtol=0.1)


class TestConditioning:

    def test_posterior_variance_shrinks_at_data(self, small_grid, small_grf):
        index = small_grid.flat_index(2, 3)
        obs = PointObservations([index], np.array([1.5]), noise_sd=0.1)
        post = condition_grf(small_grf, obs)
        assert post.covariance[index, index] < 0.02
        assert post.mean_vector[index] == pytest.approx(1.5 / (1 + 0.01), rel=1e-6)

    def test_variance_never_increases(self, small_grid, small_grf):
        obs = PointObservations([0, small_grid.n_cells - 1], np.array([0.3, -0.2]), noise_sd=0.1)
        post = condition_grf(small_grf, obs)
        assert np.all(np.diag(post.covariance) <= np.diag(small_grf.covariance) + 1e-12)
        assert np.allclose(post.covariance, post.covariance.T)

    def test_vague_observation_keeps_prior(self, small_grid, small_grf):
        index = small_grid.flat_index(2, 3)
        post = condition_grf(small_grf, PointObservations([index], np.array([1.5]), noise_sd=1e6))
        assert np.allclose(post.mean_vector, small_grf.mean_vector, atol=1e-9)
        assert np.allclose(post.covariance, small_grf.covariance, atol=1e-9)

    def test_exact_observation_pins_value(self, small_grid, small_grf):
        index = small_grid.flat_index(2, 3)
        post = condition_grf(small_grf, PointObservations([index], np.array([1.5]), noise_sd=1e-6))
        assert post.mean_vector[index] == pytest.approx(1.5, abs=1e-9)
        assert post.covariance[index, index] < 1e-10

    def test_no_observations_returns_prior(self, small_grf):
        obs = PointObservations([], np.array([]), noise_sd=0.1)
        assert condition_grf(small_grf, obs) is small_grf

    def test_location_outside_field_raises(self, small_grf):
        obs = PointObservations([small_grf.dimension], np.array([0.0]), noise_sd=0.1)
        with pytest.raises(ValueError):
            condition_grf(small_grf, obs)

    def test_singular_block_raises_field_error(self):
        cov = np.ones((3, 3))
        grf = PixelGRF(np.zeros(3), cov, cov)
        obs = PointObservations([0, 0], np.array([1.0, 1.0]), noise_sd=1e-300)
        with pytest.raises(FieldError):
            condition_grf(grf, obs)


class TestGrid:

    def test_flat_index_row_major(self):
        grid = Grid2D.square(5)
        assert grid.flat_index(3, 2) == 13
        assert grid.as_grid(np.arange(25))[2, 3] == 13

    def test_flat_index_outside_raises(self):
        with pytest.raises(ValueError):
            Grid2D.square(5).flat_index(5, 0)

    def test_square_keeps_domain_length(self):
        grid = Grid2D.square(26)
        assert grid.length_x == pytest.approx(250.0)
