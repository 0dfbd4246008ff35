import itertools
import math

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from consensus import WeightVector
from dynamics import CboConfig, run_cbo
from metrics import (BlockFitError, block_boundary_values, block_contraction_fit, ess, gaussian_proximity,
                     linear_fit, loglog_slope, mse_to_minimizer, w2_exact)
from objectives import builtin


def _brute_force_w2(A, B):
    n = A.shape[0]
    best = min(
        sum(float(np.sum((A[i] - B[p[i]]) ** 2)) for i in range(n)) / n
        for p in itertools.permutations(range(n))
    )
    return math.sqrt(best)


def _synthetic_record(values):
    return pd.DataFrame({'k': np.arange(len(values)), 't': np.arange(len(values), dtype=float), 'mse': values})


class TestMseToMinimizer:
    def test_examples(self):
        x_star = np.array([1.0, 2.0])
        assert mse_to_minimizer(np.tile(x_star, (5, 1)), x_star) == 0.0
        assert mse_to_minimizer(np.array([[2.0, 2.0], [0.0, 2.0]]), x_star) == 1.0

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(42)
        positions = rng.normal(size=(50, 3))
        x_star = rng.normal(size=3)
        naive = sum(sum((positions[i, j] - x_star[j]) ** 2 for j in range(3)) for i in range(50)) / 50
        assert_allclose(mse_to_minimizer(positions, x_star), naive, rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="columns"):
            mse_to_minimizer(np.zeros((4, 2)), np.zeros(3))


class TestW2Exact:
    def test_identity_and_point_masses(self):
        A = np.random.default_rng(42).normal(size=(7, 2))
        assert w2_exact(A, A) == 0.0
        assert_allclose(w2_exact(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])), 5.0, rtol=1e-15)

    @pytest.mark.parametrize('n', [1, 2, 3, 4, 5, 6])
    def test_matches_permutation_brute_force(self, n):
        rng = np.random.default_rng(n)
        A, B = rng.normal(size=(2, n, 2))
        assert_allclose(w2_exact(A, B), _brute_force_w2(A, B), rtol=1e-12, atol=1e-12)

    def test_metric_properties(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            A, B, C = rng.normal(size=(3, 12, 3))
            assert w2_exact(A, B) == w2_exact(B, A)
            assert w2_exact(A, C) <= w2_exact(A, B) + w2_exact(B, C) + 1e-10

    def test_common_permutation_invariance(self):
        rng = np.random.default_rng(42)
        A, B = rng.normal(size=(2, 30, 2))
        order = rng.permutation(30)
        assert_allclose(w2_exact(A[order], B[order]), w2_exact(A, B), rtol=1e-14)

    def test_dirac_target_gives_mse(self):
        rng = np.random.default_rng(42)
        positions = rng.normal(size=(40, 2))
        x_star = np.array([0.5, -0.25])
        dirac = np.tile(x_star, (40, 1))
        assert_allclose(w2_exact(positions, dirac) ** 2, mse_to_minimizer(positions, x_star), rtol=1e-10)

    def test_limits(self):
        with pytest.raises(ValueError, match="equal shapes"):
            w2_exact(np.zeros((3, 2)), np.zeros((4, 2)))
        with pytest.raises(ValueError, match="subsample"):
            w2_exact(np.zeros((513, 1)), np.zeros((513, 1)))


class TestEss:
    def test_examples(self):
        assert ess(WeightVector(np.full(8, 0.125))) == 8.0
        assert ess(WeightVector(np.array([0.0, 1.0, 0.0]))) == 1.0
        assert_allclose(ess(WeightVector(np.array([0.5, 0.25, 0.25]))), 8.0 / 3.0, rtol=1e-15)

    def test_bounds(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            w = rng.exponential(size=20)
            value = ess(w / w.sum())
            assert 1.0 - 1e-12 <= value <= 20.0 + 1e-12


class TestFits:
    def test_exact_power_law(self):
        xs = np.array([1.0, 10.0, 100.0, 1000.0])
        fit = loglog_slope(xs, 3.0 / xs)
        assert_allclose(fit.slope, -1.0, rtol=1e-12)
        assert_allclose(fit.r_squared, 1.0, rtol=1e-12)
        assert fit.n_points == 4

    def test_constant_data(self):
        fit = loglog_slope([1.0, 2.0, 4.0], [5.0, 5.0, 5.0])
        assert fit.slope == 0.0
        assert fit.r_squared == 1.0

    def test_matches_closed_form_ols(self):
        xs = np.array([1.0, 2.0, 3.0, 5.0])
        ys = np.array([2.1, 3.9, 6.2, 9.8])
        x_bar, y_bar = xs.mean(), ys.mean()
        slope = np.sum((xs - x_bar) * (ys - y_bar)) / np.sum((xs - x_bar) ** 2)
        fit = linear_fit(xs, ys)
        assert_allclose(fit.slope, slope, rtol=1e-12)
        assert_allclose(fit.intercept, y_bar - slope * x_bar, rtol=1e-12)
        assert 0.0 <= fit.r_squared <= 1.0

    def test_invalid_data(self):
        with pytest.raises(ValueError, match="positive"):
            loglog_slope([1.0, 2.0], [1.0, 0.0])
        with pytest.raises(ValueError, match="at least 2"):
            linear_fit([1.0], [1.0])


class TestBlockContraction:
    def test_geometric_record(self):
        rho, floor = block_contraction_fit(_synthetic_record(0.5 ** np.arange(8)), T_block=1.0)
        assert_allclose(rho, 0.5, rtol=1e-12)
        assert abs(floor) < 1e-12

    def test_affine_record(self):
        u = [1.0]
        for _ in range(9):
            u.append(0.5 * u[-1] + 0.1)
        rho, floor = block_contraction_fit(_synthetic_record(np.array(u)), T_block=1.0)
        assert_allclose([rho, floor], [0.5, 0.1], rtol=1e-10)

    def test_boundary_uses_next_recorded_row(self):
        frame = pd.DataFrame({'k': [0, 3, 7, 12], 't': [0.0, 0.9, 2.3, 3.1], 'mse': [4.0, 3.0, 2.0, 1.0]})
        boundaries = block_boundary_values(frame, 1.0)
        assert boundaries['t'].tolist() == [0.0, 2.3, 2.3, 3.1]
        assert boundaries['k'].tolist() == [0, 7, 7, 12]

    def test_too_few_blocks(self):
        with pytest.raises(BlockFitError) as failure:
            block_contraction_fit(_synthetic_record(np.array([1.0, 0.5, 0.25])), T_block=1.0)
        assert failure.value.n_blocks == 3

    @pytest.mark.slow
    def test_quadratic_run_contracts(self):
        cfg = CboConfig(alpha=200.0, gamma=4.0, n_particles=400, zeta=0.5, max_iter=2000, m0=(1.5,))
        record = run_cbo(cfg, builtin('quadratic', 1), record_every=5)
        rho, _ = block_contraction_fit(record, T_block=10.0)
        assert rho < 1.0


class TestGaussianProximity:
    def test_gaussian_sample(self):
        alpha, gamma = 100.0, 4.0
        sample = np.random.default_rng(42).normal(scale=math.sqrt(gamma / alpha), size=(10_000, 1))
        report = gaussian_proximity(sample, alpha, gamma, gamma / alpha)
        assert report['var_in_band']
        assert abs(report['excess_kurtosis']) < 0.2

    def test_constant_positions(self):
        report = gaussian_proximity(np.ones((200, 2)), 100.0, 4.0, 0.04)
        assert not report['var_in_band']

    def test_uniform_sample_has_negative_kurtosis(self):
        alpha, gamma = 100.0, 4.0
        half_width = math.sqrt(3.0 * gamma / alpha)
        sample = np.random.default_rng(42).uniform(-half_width, half_width, size=(10_000, 1))
        report = gaussian_proximity(sample, alpha, gamma, gamma / alpha)
        assert report['var_in_band']
        assert abs(report['excess_kurtosis'] + 1.2) < 0.1

    def test_needs_enough_particles(self):
        with pytest.raises(ValueError, match="100"):
            gaussian_proximity(np.zeros((50, 1)), 1.0, 1.0, 1.0)
