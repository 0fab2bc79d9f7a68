import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accelssl.data import ChannelStats, SensorSequence, compute_norm_stats
from accelssl.errors import ConfigError, DataError
from accelssl.protocols import (ImbalanceSpec, ProtocolConfig, balanced_counts,
                                imbalance_counts, imbalance_subsets,
                                limited_label_subset, macro_f1, norm_ablation,
                                rate_mismatch_variant, subsample_users,
                                subsample_windows)
from conftest import make_window_set


def brute_force_macro_f1(predictions, labels, num_classes):
    """Independent oracle: per-class precision/recall from first principles."""
    scores = []
    for c in range(num_classes):
        tp = sum(1 for p, t in zip(predictions, labels) if p == c and t == c)
        fp = sum(1 for p, t in zip(predictions, labels) if p == c and t != c)
        fn = sum(1 for p, t in zip(predictions, labels) if p != c and t == c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        if precision + recall == 0:
            scores.append(0.0)
        else:
            scores.append(2 * precision * recall / (precision + recall))
    return sum(scores) / num_classes


class TestMacroF1:
    def test_perfect_predictions(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        assert macro_f1(labels, labels, 3) == 1.0

    def test_always_majority_on_75_25_split(self):
        labels = np.array([0] * 75 + [1] * 25)
        predictions = np.zeros(100, dtype=int)
        # class 0: p=0.75, r=1 -> f1 = 6/7; class 1: 0
        expected = (2 * 0.75 / 1.75 + 0.0) / 2
        assert macro_f1(predictions, labels, 2) == pytest.approx(expected, abs=1e-9)
        assert macro_f1(predictions, labels, 2) == pytest.approx(0.4286, abs=1e-4)

    def test_matches_brute_force_on_random_confusions(self):
        g = np.random.default_rng(0)
        for _ in range(50):
            c = int(g.integers(2, 11))
            n = int(g.integers(1, 300))
            labels = g.integers(0, c, size=n)
            predictions = g.integers(0, c, size=n)
            assert macro_f1(predictions, labels, c) == pytest.approx(
                brute_force_macro_f1(predictions, labels, c), abs=1e-9)

    def test_out_of_range_ids_rejected(self):
        with pytest.raises(DataError):
            macro_f1(np.array([0, 3]), np.array([0, 1]), 3)
        with pytest.raises(DataError):
            macro_f1(np.array([0, 1]), np.array([-1, 1]), 3)

    @given(seed=st.integers(0, 10_000), c=st.integers(2, 8))
    @settings(max_examples=40, deadline=None)
    def test_invariant_under_joint_relabeling(self, seed, c):
        g = np.random.default_rng(seed)
        labels = g.integers(0, c, size=60)
        predictions = g.integers(0, c, size=60)
        perm = g.permutation(c)
        assert macro_f1(perm[predictions], perm[labels], c) == pytest.approx(
            macro_f1(predictions, labels, c), abs=1e-12)


class TestUserSubsampling:
    def test_capture24_style_grid(self):
        users = [f"u{i:03d}" for i in range(135)]
        sizes = [len(subsample_users(users, pct, seed=0))
                 for pct in (1, 5, 10, 25, 50, 100)]
        assert sizes == [1, 6, 13, 33, 67, 135]

    def test_full_percentage_is_identity(self):
        users = {f"u{i}" for i in range(9)}
        assert set(subsample_users(users, 100, seed=3)) == users

    def test_deterministic_in_seed(self):
        users = [f"u{i}" for i in range(30)]
        assert subsample_users(users, 25, seed=9) == subsample_users(users, 25, seed=9)

    def test_minimum_one_user(self):
        assert len(subsample_users(["a", "b", "c"], 1, seed=0)) == 1


class TestWindowSubsampling:
    def test_fraction_arithmetic(self):
        ws = make_window_set(n=200)
        assert len(subsample_windows(ws, 10, seed=0)) == 20
        assert len(subsample_windows(ws, 0.5, seed=0)) == 1

    def test_identity_at_100(self):
        ws = make_window_set(n=37)
        out = subsample_windows(ws, 100, seed=5)
        np.testing.assert_array_equal(out.values, ws.values)

    def test_no_duplicates(self):
        ws = make_window_set(n=100)
        out = subsample_windows(ws, 50, seed=1)
        assert len(np.unique(out.origins)) == len(out)

    def test_class_proportions_roughly_preserved(self):
        g = np.random.default_rng(0)
        n = 100_000
        probs = np.array([0.4, 0.25, 0.15, 0.1, 0.06, 0.04])
        labels = g.choice(6, size=n, p=probs)
        ws = make_window_set(n=n, length=2, num_classes=6)
        ws.labels = labels
        sub = subsample_windows(ws, 0.1, seed=2)
        sub_dist = np.bincount(sub.labels, minlength=6) / len(sub)
        assert np.all(np.abs(sub_dist - probs) < 0.02 + 3 * np.sqrt(probs / len(sub)))


class TestImbalance:
    def test_counts_for_rho_001(self):
        spec = ImbalanceSpec(rho=0.01, majority_count=20000, num_classes=6)
        counts = imbalance_counts(spec)
        assert counts.tolist() == [20000, 7962, 3170, 1262, 502, 200]
        assert counts.sum() == 33096

    def test_rarest_class_at_each_rho(self):
        for rho in (0.001, 0.01, 0.1):
            spec = ImbalanceSpec(rho=rho, majority_count=20000, num_classes=6)
            counts = imbalance_counts(spec)
            assert counts[-1] == round(20000 * rho)

    def test_rho_one_is_balanced_limit(self):
        spec = ImbalanceSpec(rho=1.0, majority_count=500, num_classes=4)
        assert imbalance_counts(spec).tolist() == [500] * 4

    def test_balanced_total_matches_imbalanced(self):
        for rho in (0.001, 0.01, 0.1):
            spec = ImbalanceSpec(rho=rho, majority_count=20000, num_classes=6)
            assert balanced_counts(spec).sum() == imbalance_counts(spec).sum()

    def test_subsets_from_window_pool(self):
        ws = make_window_set(n=6000, length=2, num_classes=3)
        ws.labels = np.arange(6000) % 3
        spec = ImbalanceSpec(rho=0.1, majority_count=1000, num_classes=3)
        result = imbalance_subsets(ws, spec, seed=0)
        imb, bal = result
        assert len(imb) == imbalance_counts(spec).sum()
        assert len(bal) == len(imb)
        assert not result.used_replacement
        # the class receiving the majority slot holds majority_count windows
        majority_class = result.class_order[0]
        assert int((imb.labels == majority_class).sum()) == 1000
        rarest_class = result.class_order[-1]
        assert int((imb.labels == rarest_class).sum()) == 100

    def test_replacement_fallback_flagged(self):
        ws = make_window_set(n=30, length=2, num_classes=3)
        ws.labels = np.arange(30) % 3
        spec = ImbalanceSpec(rho=0.5, majority_count=100, num_classes=3)
        result = imbalance_subsets(ws, spec, seed=0)
        assert result.used_replacement

    def test_class_roles_randomized_by_seed(self):
        orders = set()
        ws = make_window_set(n=600, length=2, num_classes=3)
        ws.labels = np.arange(600) % 3
        spec = ImbalanceSpec(rho=0.5, majority_count=100, num_classes=3)
        for seed in range(10):
            orders.add(tuple(imbalance_subsets(ws, spec, seed=seed).class_order))
        assert len(orders) > 1

    def test_needs_two_classes(self):
        with pytest.raises(ConfigError):
            ImbalanceSpec(rho=0.1, num_classes=1)


class TestLimitedLabels:
    def test_exact_budget_with_ample_data(self):
        ws = make_window_set(n=120, num_classes=6)
        ws.labels = np.arange(120) % 6
        out = limited_label_subset(ws, 2, seed=0)
        assert len(out) == 12
        assert np.bincount(out.labels, minlength=6).tolist() == [2] * 6

    def test_shortfall_is_clamped(self, caplog):
        ws = make_window_set(n=10, num_classes=3)
        ws.labels = np.array([0] * 9 + [1])
        out = limited_label_subset(ws, 5, seed=0)
        assert int((out.labels == 1).sum()) == 1
        assert int((out.labels == 0).sum()) == 5

    def test_deterministic(self):
        ws = make_window_set(n=60, num_classes=3)
        a = limited_label_subset(ws, 3, seed=4)
        b = limited_label_subset(ws, 3, seed=4)
        np.testing.assert_array_equal(a.origins, b.origins)


class TestRateMismatch:
    def _sequences(self, hz):
        g = np.random.default_rng(0)
        return [SensorSequence(user_id="u1", sample_rate_hz=hz,
                               samples=g.normal(size=(int(hz * 20), 3)),
                               labels=np.zeros(int(hz * 20), dtype=int))]

    def test_native_keeps_duration_short(self):
        ws = rate_mismatch_variant(self._sequences(200.0), use_native=True)
        assert ws.sample_rate_hz == 200.0
        assert ws.window_length_samples / ws.sample_rate_hz == pytest.approx(0.5)

    def test_downsampled_restores_two_seconds(self):
        ws = rate_mismatch_variant(self._sequences(200.0), use_native=False)
        assert ws.sample_rate_hz == 50.0
        assert ws.window_length_samples / ws.sample_rate_hz == pytest.approx(2.0)

    def test_variants_coincide_at_50hz(self):
        native = rate_mismatch_variant(self._sequences(50.0), use_native=True)
        down = rate_mismatch_variant(self._sequences(50.0), use_native=False)
        np.testing.assert_array_equal(native.values, down.values)

    def test_100hz_native_duration(self):
        ws = rate_mismatch_variant(self._sequences(100.0), use_native=True)
        assert ws.window_length_samples / ws.sample_rate_hz == pytest.approx(1.0)


class TestNormAblation:
    def test_source_mode_records_provenance(self, window_set):
        stats = ChannelStats(mean=np.zeros(3), std=np.ones(3),
                             source_dataset_id="big_source")
        out = norm_ablation(window_set, stats, "source")
        assert out.normalization.source_dataset_id == "big_source"
        np.testing.assert_array_equal(out.values, window_set.values)

    def test_target_mode_self_normalizes(self, window_set):
        out = norm_ablation(window_set, None, "target")
        flat = out.values.reshape(-1, 3)
        np.testing.assert_allclose(flat.mean(axis=0), 0, atol=1e-9)

    def test_modes_coincide_iff_stats_coincide(self, window_set):
        target_stats = compute_norm_stats(window_set)
        out_a = norm_ablation(window_set, target_stats, "source")
        out_b = norm_ablation(window_set, None, "target")
        np.testing.assert_allclose(out_a.values, out_b.values, atol=1e-12)

    def test_unknown_mode(self, window_set):
        with pytest.raises(ConfigError):
            norm_ablation(window_set, None, "sideways")


class TestProtocolConfig:
    def test_known_criteria_accepted(self):
        assert ProtocolConfig("user_quantity").criterion == "user_quantity"

    def test_unknown_criterion_rejected(self):
        with pytest.raises(ConfigError):
            ProtocolConfig("leaderboard")
