import numpy as np
import pytest

from oedplace import (
    CapabilityError,
    DensePrior,
    Grid2D,
    PriorOperator,
    ValidationError,
    build_prior,
    rotated_anisotropy,
)
from _oracles import densify, dense_prior_sqrt, small_prior


class TestAnisotropyTensor:
    def test_identity_at_unit_parameters(self):
        assert rotated_anisotropy(1.0, 1.0, 0.3) == pytest.approx(np.eye(2))

    def test_eigenvalues_and_rotation(self):
        theta = rotated_anisotropy(4.0, 0.25, 0.7)
        eigs = np.sort(np.linalg.eigvalsh(theta))
        assert eigs == pytest.approx([0.25, 4.0])
        direction = np.array([np.cos(0.7), np.sin(0.7)])
        assert theta @ direction == pytest.approx(4.0 * direction)

    def test_must_be_positive(self):
        with pytest.raises(ValidationError):
            rotated_anisotropy(1.0, -2.0, 0.0)


class TestPriorOperator:
    def test_covariance_precision_inverse_pair(self, grid4):
        prior = small_prior(grid4)
        rng = np.random.default_rng(0)
        v = rng.standard_normal(prior.n)
        assert prior.apply_precision(prior.apply_covariance(v)) == pytest.approx(v)
        assert prior.apply_covariance(prior.apply_precision(v)) == pytest.approx(v)

    def test_precision_norm_matches_quadratic_form(self, grid4):
        prior = small_prior(grid4)
        rng = np.random.default_rng(1)
        v = rng.standard_normal(prior.n)
        assert prior.precision_norm_sq(v) == pytest.approx(v @ prior.apply_precision(v))
        assert prior.precision_norm_sq(np.zeros(prior.n)) == 0.0

    def test_sqrt_factor_reproduces_covariance(self, grid4):
        prior = small_prior(grid4)
        s = dense_prior_sqrt(prior)
        cov = densify(prior.apply_covariance, prior.n)
        assert s @ s.T == pytest.approx(cov, abs=1e-12)

    def test_sqrt_transpose_is_the_adjoint(self, grid4):
        prior = small_prior(grid4)
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((2, prior.n))
        assert prior.sqrt_action(a) @ b == pytest.approx(a @ prior.sqrt_transpose_action(b))

    def test_pointwise_variance_is_covariance_diagonal(self, grid4):
        prior = small_prior(grid4)
        cov = densify(prior.apply_covariance, prior.n)
        assert prior.pointwise_variance() == pytest.approx(np.diag(cov))

    def test_scalar_mean_broadcasts(self, grid4):
        prior = small_prior(grid4, mean=2.5)
        assert prior.mean.shape == (prior.n,)
        assert np.all(prior.mean == 2.5)

    def test_sample_determinism_and_spread(self, grid4):
        prior = small_prior(grid4)
        assert prior.sample(7) == pytest.approx(prior.sample(7))
        assert not np.allclose(prior.sample(7), prior.sample(8))
        rng = np.random.default_rng(7)
        a = prior.sample(rng)
        b = prior.sample(rng)  # generator advances between draws
        assert not np.allclose(a, b)

    def test_sample_covariance_matches_lumped_model(self, grid4):
        # Samples use the lumped-mass square root, so their covariance is
        # A^{-1} M_lumped A^{-1}; check the diagonal against many draws.
        prior = small_prior(grid4)
        lumped_cov = densify(lambda v: prior.apply_covariance(v, lumped=True), prior.n)
        rng = np.random.default_rng(3)
        draws = np.stack([prior.sample(rng) for _ in range(4000)])
        sample_var = draws.var(axis=0)
        ratio = sample_var / np.diag(lumped_cov)
        assert np.all((0.85 < ratio) & (ratio < 1.15))

    def test_invalid_parameters_rejected(self, grid4):
        with pytest.raises(ValidationError):
            PriorOperator(grid4, -1.0, 1.0)
        with pytest.raises(ValidationError):
            PriorOperator(grid4, 1.0, 0.0)

    def test_build_prior_defaults(self, grid4):
        prior = build_prior(grid4, 0.3, 1.0)
        assert prior.n == grid4.n_vertices


class TestRobinBoundaryCorrection:
    GAMMA, DELTA = 0.1, 4.0

    def _variances(self, nx, beta):
        grid = Grid2D(nx, nx)
        prior = PriorOperator(grid, self.GAMMA, self.DELTA, beta=beta)
        var = prior.pointwise_variance()
        center = var[grid.vertex_index(nx // 2, nx // 2)]
        edge = var[grid.vertex_index(nx // 2, 0)]
        return center, edge

    def test_center_variance_matches_free_space(self):
        # Whittle-Matern marginal variance in 2D for (delta - div gamma grad):
        # 1 / (4 pi gamma delta), valid when the correlation length is small
        # against the domain.
        center, _ = self._variances(24, beta=None)
        free_space = 1.0 / (4.0 * np.pi * self.GAMMA * self.DELTA)
        assert center == pytest.approx(free_space, rel=0.02)

    def test_neumann_doubles_edge_variance(self):
        # With pure Neumann conditions the reflected Green's function doubles
        # the variance at a straight boundary.
        center, edge = self._variances(24, beta=0.0)
        assert edge / center == pytest.approx(2.0, rel=0.05)

    def test_robin_correction_reduces_boundary_artifact(self):
        center_r, edge_r = self._variances(16, beta=None)
        center_n, edge_n = self._variances(16, beta=0.0)
        assert abs(edge_r / center_r - 1.0) < abs(edge_n / center_n - 1.0)

    def test_boundary_ratio_is_mesh_stable(self):
        ratios = []
        for nx in (16, 32):
            center, edge = self._variances(nx, beta=None)
            ratios.append(edge / center)
        assert abs(ratios[0] - ratios[1]) < 0.02


class TestDensePrior:
    def test_matches_operator_prior(self, grid4):
        prior = small_prior(grid4)
        cov = densify(prior.apply_covariance, prior.n)
        dense = DensePrior(prior.mean, cov)
        rng = np.random.default_rng(4)
        v = rng.standard_normal(prior.n)
        assert dense.apply_covariance(v) == pytest.approx(prior.apply_covariance(v))
        assert dense.apply_precision(v) == pytest.approx(prior.apply_precision(v),
                                                         rel=1e-8)
        assert dense.precision_norm_sq(v) == pytest.approx(prior.precision_norm_sq(v),
                                                           rel=1e-8)
        assert dense.pointwise_variance() == pytest.approx(prior.pointwise_variance())

    def test_sqrt_factor(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((6, 6))
        cov = a @ a.T + 6 * np.eye(6)
        dense = DensePrior(np.zeros(6), cov)
        s = np.column_stack([dense.sqrt_action(col) for col in np.eye(6)])
        assert s @ s.T == pytest.approx(cov)

    def test_rejects_non_spd(self):
        with pytest.raises((ValidationError, np.linalg.LinAlgError)):
            DensePrior(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_sample_covariance(self):
        cov = np.array([[2.0, 0.6], [0.6, 0.5]])
        dense = DensePrior(np.array([1.0, -1.0]), cov)
        rng = np.random.default_rng(6)
        draws = np.stack([dense.sample(rng) for _ in range(20000)])
        assert draws.mean(axis=0) == pytest.approx([1.0, -1.0], abs=0.05)
        assert np.cov(draws.T) == pytest.approx(cov, abs=0.08)


def test_pointwise_variance_guarded_at_scale():
    grid = Grid2D(80, 80)  # 6561 vertices, past the dense-solve guard
    prior = PriorOperator(grid, 0.1, 4.0)
    with pytest.raises(CapabilityError):
        prior.pointwise_variance()
