import numpy as np
import pytest
import torch

from accelssl.errors import DataError
from accelssl.features import (FeatureMatrix, implicit_dimensionality,
                               layerwise_similarity, linear_cka,
                               separability_gap, separability_gap_from_features)
from accelssl.models import ConvEncoder, CpcEncoder


def random_matrix(rows=200, cols=16, seed=0):
    return np.random.default_rng(seed).normal(size=(rows, cols))


def random_orthogonal(dim, seed=0):
    q, r = np.linalg.qr(np.random.default_rng(seed).normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


class TestLinearCka:
    def test_self_similarity_is_one(self):
        x = random_matrix()
        assert linear_cka(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_isotropic_scaling_invariance(self):
        x = random_matrix()
        assert linear_cka(x, 3.7 * x) == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_invariance(self):
        x = random_matrix()
        q = random_orthogonal(x.shape[1], seed=1)
        assert linear_cka(x, x @ q) == pytest.approx(1.0, abs=1e-9)

    def test_symmetry(self):
        x = random_matrix(seed=1)
        y = random_matrix(seed=2)
        assert abs(linear_cka(x, y) - linear_cka(y, x)) < 1e-12

    def test_bounded_in_unit_interval(self):
        for seed in range(5):
            x = random_matrix(seed=seed)
            y = random_matrix(cols=8, seed=seed + 50)
            value = linear_cka(x, y)
            assert 0.0 <= value <= 1.0 + 1e-12

    def test_zero_variance_is_error(self):
        x = random_matrix()
        with pytest.raises(DataError):
            linear_cka(x, np.ones_like(x))

    def test_mismatched_rows_rejected(self):
        with pytest.raises(DataError):
            linear_cka(random_matrix(rows=10), random_matrix(rows=11))

    def test_gram_path_matches_direct_path(self):
        # wide matrix routes through the row-Gram computation
        x = random_matrix(rows=40, cols=10, seed=3)
        y_wide = random_matrix(rows=40, cols=3000, seed=4)
        direct_num = np.linalg.norm(
            (y_wide - y_wide.mean(0)).T @ (x - x.mean(0))) ** 2
        xc = x - x.mean(0)
        yc = y_wide - y_wide.mean(0)
        direct = direct_num / (np.linalg.norm(xc.T @ xc) * np.linalg.norm(yc.T @ yc))
        assert linear_cka(x, y_wide) == pytest.approx(direct, rel=1e-10)

    def test_accepts_feature_matrix_wrapper(self):
        x = FeatureMatrix(random_matrix(), layer_name="conv1")
        assert linear_cka(x, x) == pytest.approx(1.0)


class TestLayerwiseSimilarity:
    def test_self_comparison_diagonal_is_one(self):
        torch.manual_seed(0)
        enc = ConvEncoder().eval()
        probe = np.random.default_rng(0).normal(size=(64, 48, 3))
        sim = layerwise_similarity(enc, enc, probe)
        np.testing.assert_allclose(np.diag(sim.values), 1.0, atol=1e-9)
        assert sim.layer_names_a == ["conv1", "conv2", "conv3"]

    def test_cpc_comparison_is_4x4(self):
        torch.manual_seed(0)
        a = CpcEncoder().eval()
        b = CpcEncoder().eval()
        probe = np.random.default_rng(1).normal(size=(32, 40, 3))
        sim = layerwise_similarity(a, b, probe)
        assert sim.values.shape == (4, 4)
        assert sim.layer_names_a[-1] == "gru"

    def test_values_bounded(self):
        torch.manual_seed(1)
        a = ConvEncoder().eval()
        b = ConvEncoder().eval()
        probe = np.random.default_rng(2).normal(size=(40, 48, 3))
        sim = layerwise_similarity(a, b, probe)
        assert np.all(sim.values >= 0) and np.all(sim.values <= 1 + 1e-12)


class TestSeparabilityGap:
    def test_seed_collision_makes_random_equal_true_and_gap_zero(self):
        # the gap's random labels are rng(seed)'s first draw; building the
        # ground truth from the same stream forces random == true exactly
        g = np.random.default_rng(5)
        y = g.integers(0, 2, size=300)
        x = np.array([[-3.0, 0.0], [3.0, 0.0]])[y] + \
            np.random.default_rng(99).normal(scale=0.4, size=(300, 2))
        gap, true_f1, random_f1 = separability_gap_from_features(
            x, y, 2, seed=5, return_details=True)
        assert random_f1 == true_f1
        assert gap == 0.0

    def test_separable_gaussians_gap_near_half(self):
        x, y = _gaussian_classes(seed=1)
        gap, true_f1, random_f1 = separability_gap_from_features(
            x, y, 2, seed=7, return_details=True)
        assert true_f1 >= 0.95
        assert random_f1 <= 0.7
        assert 0.25 <= gap <= 0.75

    def test_constant_features_give_chance_level_gap(self):
        x = np.ones((300, 8))
        y = np.random.default_rng(0).integers(0, 2, size=300)
        gap = separability_gap_from_features(x, y, 2, seed=0)
        assert abs(gap) <= 0.05

    def test_gap_bounded(self):
        x, y = _gaussian_classes(seed=3)
        gap = separability_gap_from_features(x, y, 2, seed=3)
        assert -1.0 <= gap <= 1.0

    def test_window_set_surface(self, window_set):
        gap = separability_gap(lambda values: values.reshape(len(values), -1),
                               window_set, seed=0)
        assert -1.0 <= gap <= 1.0


def _gaussian_classes(n=400, seed=0):
    g = np.random.default_rng(seed)
    y = g.integers(0, 2, size=n)
    centers = np.array([[-3.0, 0.0], [3.0, 0.0]])
    x = centers[y] + g.normal(scale=0.5, size=(n, 2))
    return x, y


class TestImplicitDimensionality:
    def test_rank_one_explained_by_first_component(self):
        g = np.random.default_rng(0)
        x = np.outer(g.normal(size=100), g.normal(size=12))
        curve = implicit_dimensionality(x, n=5)
        assert curve[0] == pytest.approx(1.0, abs=1e-9)

    def test_isotropic_gaussian_is_linear(self):
        x = np.random.default_rng(0).normal(size=(10_000, 20))
        curve = implicit_dimensionality(x, n=20)
        expected = np.arange(1, 21) / 20.0
        assert np.max(np.abs(curve - expected)) < 0.02

    def test_monotone_and_bounded(self):
        for seed in range(5):
            x = np.random.default_rng(seed).normal(size=(50, 30))
            curve = implicit_dimensionality(x, n=20)
            assert np.all(np.diff(curve) >= -1e-12)
            assert curve[-1] <= 1.0 + 1e-12

    def test_n_truncated_to_feature_dim(self):
        x = np.random.default_rng(0).normal(size=(40, 6))
        curve = implicit_dimensionality(x, n=20)
        assert len(curve) == 6
        assert curve[-1] == pytest.approx(1.0, abs=1e-9)

    def test_needs_more_rows_than_components(self):
        with pytest.raises(DataError):
            implicit_dimensionality(np.zeros((10, 30)), n=20)

    def test_constant_features_rejected(self):
        with pytest.raises(DataError):
            implicit_dimensionality(np.ones((50, 4)), n=2)
