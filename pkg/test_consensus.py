import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from consensus import WeightVector, clip, consensus_point, global_best, softmin_weights, weight_maps
from objectives import builtin, evaluate_batch


class TestSoftminWeights:
    def test_equal_values_give_uniform_weights(self):
        weights = softmin_weights(np.full(8, 3.5), alpha=50.0)
        assert_array_equal(weights.weights, np.full(8, 0.125))
        assert weights.ess == 8.0

    def test_shift_invariance_is_exact_for_dyadic_shifts(self):
        values = np.array([0.25, 0.5, 1.0, 2.0, 0.75])
        base = softmin_weights(values, alpha=3.0)
        shifted = softmin_weights(values + 8.0, alpha=3.0)
        assert_array_equal(base.weights, shifted.weights)

    def test_scale_duality(self):
        values = np.random.default_rng(42).uniform(0.0, 2.0, size=30)
        assert_allclose(softmin_weights(2.5 * values, 4.0).weights, softmin_weights(values, 10.0).weights,
                        rtol=1e-12, atol=1e-12)

    def test_no_underflow_at_large_alpha(self):
        weights = softmin_weights([1000.0, 0.0, 0.5], alpha=1e6)
        assert_array_equal(weights.weights, [0.0, 1.0, 0.0])

    def test_invalid_input(self):
        with pytest.raises(ValueError, match="alpha"):
            softmin_weights([1.0, 2.0], alpha=0.0)
        with pytest.raises(ValueError, match="empty"):
            softmin_weights([], alpha=1.0)
        with pytest.raises(ValueError, match="finite"):
            softmin_weights([1.0, np.inf], alpha=1.0)

    def test_concentration_on_global_best_grows_with_alpha(self):
        values = np.random.default_rng(42).uniform(0.0, 1.0, size=40)
        best = int(np.argmin(values))
        mass = [softmin_weights(values, alpha).weights[best] for alpha in (0.1, 1.0, 10.0, 100.0, 1e4)]
        assert all(later >= earlier for earlier, later in zip(mass, mass[1:]))
        assert mass[-1] > 1.0 - 1e-12


class TestWeightVector:
    def test_rejects_negative_entries(self):
        with pytest.raises(ValueError, match="non-negative"):
            WeightVector(np.array([1.5, -0.5]))

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError, match="expected 1"):
            WeightVector(np.array([0.5, 0.4]))

    def test_rejects_all_zero(self):
        with pytest.raises(ValueError):
            WeightVector(np.zeros(3))

    def test_weights_are_read_only(self):
        weights = WeightVector(np.array([0.25, 0.75]))
        with pytest.raises(ValueError):
            weights.weights[0] = 1.0


class TestConsensusPoint:
    def test_matches_extended_precision_sum(self):
        rng = np.random.default_rng(42)
        positions = rng.normal(size=(100, 3))
        weights = softmin_weights(rng.uniform(size=100), alpha=2.0)
        theta = consensus_point(positions, weights)
        oracle = [math.fsum(weights.weights[i] * positions[i, j] for i in range(100)) for j in range(3)]
        assert_allclose(theta, oracle, rtol=1e-13, atol=1e-13)

    def test_inside_convex_hull(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            positions = rng.normal(size=(25, 1))
            weights = softmin_weights(rng.uniform(size=25), alpha=rng.uniform(0.1, 100.0))
            theta = consensus_point(positions, weights)
            assert positions.min() <= theta[0] <= positions.max()

    def test_translation_equivariance(self):
        positions = np.array([[0.5, 1.0], [2.0, -1.0], [0.25, 0.75]])
        weights = softmin_weights([0.0, 1.0, 2.0], alpha=1.0)
        shifted = consensus_point(positions + 4.0, weights)
        assert_allclose(shifted, consensus_point(positions, weights) + 4.0, rtol=1e-15)

    def test_large_alpha_selects_global_best(self):
        spec = builtin('rastrigin', 2)
        positions = np.random.default_rng(42).uniform(-2.0, 2.0, size=(64, 2))
        values = evaluate_batch(spec, positions)
        index, best = global_best(positions, values)
        theta = consensus_point(positions, softmin_weights(values, alpha=1e9))
        assert_array_equal(theta, best)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="does not match"):
            consensus_point(np.zeros((3, 2)), np.full(4, 0.25))


class TestClip:
    def test_inside_ball_unchanged(self):
        x = np.array([0.6, 0.8])
        assert_array_equal(clip(x, 1.0), x)

    def test_outside_ball_projected_radially(self):
        assert_allclose(clip(np.array([3.0, 4.0]), 2.0), [1.2, 1.6], rtol=1e-15)

    def test_zero_and_infinite_radius(self):
        assert_array_equal(clip(np.zeros(3), 1.0), np.zeros(3))
        x = np.array([1e6, -2e6])
        assert_array_equal(clip(x, math.inf), x)

    def test_idempotent_and_nonexpansive(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            x, y = rng.normal(scale=3.0, size=(2, 3))
            cx, cy = clip(x, 2.0), clip(y, 2.0)
            assert_allclose(clip(cx, 2.0), cx, rtol=1e-15)
            assert np.linalg.norm(cx - cy) <= np.linalg.norm(x - y) * (1.0 + 1e-12)


class TestGlobalBest:
    def test_ties_go_to_lowest_index(self):
        positions = np.arange(8.0).reshape(4, 2)
        index, best = global_best(positions, [3.0, 1.0, 1.0, 2.0])
        assert index == 1
        assert_array_equal(best, [2.0, 3.0])

    def test_invalid_values(self):
        with pytest.raises(ValueError, match="empty"):
            global_best(np.empty((0, 2)), [])
        with pytest.raises(ValueError, match="finite"):
            global_best(np.zeros((2, 1)), [0.0, np.nan])


class TestWeightMaps:
    def test_unnormalized_maps(self):
        spec = builtin('quadratic', 1)
        positions = np.array([[0.0], [1.0], [-2.0]])
        h0, h1 = weight_maps(spec, 2.0, positions)
        assert_allclose(h1, np.exp(-2.0 * np.array([0.0, 0.5, 2.0])), rtol=1e-15)
        assert_allclose(h0, positions * h1[:, None], rtol=1e-15)
        theta = h0.sum(axis=0)[0] / h1.sum()
        assert_allclose(theta, consensus_point(positions, softmin_weights([0.0, 0.5, 2.0], 2.0))[0], rtol=1e-14)
