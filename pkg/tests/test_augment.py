import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accelssl.augment import (TRANSFORM_ORDER, TransformKind, TransformParams,
                              apply_transform, random_rotation_matrices,
                              sample_contrastive_pair, sample_multitask_batch)
from accelssl.errors import DataError

PARAMS = TransformParams()


def window(length=64, seed=0):
    return np.random.default_rng(seed).normal(size=(length, 3))


class FixedBits:
    """Stand-in generator returning scripted multitask Bernoulli draws."""

    def __init__(self, bits):
        self.bits = np.asarray(bits)

    def integers(self, low, high, size=None):
        return np.tile(self.bits, (size[0], 1))


class TestSingleTransforms:
    @pytest.mark.parametrize("kind", list(TransformKind))
    def test_shape_preserved(self, kind, rng):
        w = window()
        out = apply_transform(kind, w, PARAMS, rng)
        assert out.shape == w.shape

    def test_negation_is_involution(self, rng):
        w = window()
        out = apply_transform(TransformKind.NEGATION, w, PARAMS, rng)
        np.testing.assert_array_equal(-out, w)

    def test_reversing_is_involution(self, rng):
        w = window()
        once = apply_transform(TransformKind.REVERSING, w, PARAMS, rng)
        twice = apply_transform(TransformKind.REVERSING, once, PARAMS, rng)
        np.testing.assert_array_equal(twice, w)

    def test_rotation_preserves_norms(self, rng):
        w = window()
        out = apply_transform(TransformKind.ROTATION, w, PARAMS, rng)
        np.testing.assert_allclose(np.linalg.norm(out, axis=1),
                                   np.linalg.norm(w, axis=1), atol=1e-6)

    def test_rotation_matrices_are_proper(self, rng):
        mats = random_rotation_matrices(50, rng)
        np.testing.assert_allclose(np.linalg.det(mats), 1.0, atol=1e-6)
        identity = np.einsum("bij,bkj->bik", mats, mats)
        np.testing.assert_allclose(identity, np.broadcast_to(np.eye(3), (50, 3, 3)),
                                   atol=1e-9)

    def test_scramble_rearranges_sections(self, rng):
        w = window()
        out = apply_transform(TransformKind.SCRAMBLE, w, PARAMS, rng)
        # multiset of rows is unchanged
        np.testing.assert_allclose(np.sort(out, axis=0), np.sort(w, axis=0))

    def test_scramble_needs_enough_samples(self, rng):
        with pytest.raises(DataError):
            apply_transform(TransformKind.SCRAMBLE, window(length=3), PARAMS, rng)

    def test_channel_permute_preserves_values(self, rng):
        w = window()
        out = apply_transform(TransformKind.CHANNEL_PERMUTE, w, PARAMS, rng)
        np.testing.assert_allclose(np.sort(out.ravel()), np.sort(w.ravel()))

    def test_time_warp_keeps_length(self, rng):
        for length in (32, 100, 257):
            out = apply_transform(TransformKind.TIME_WARP, window(length), PARAMS, rng)
            assert out.shape == (length, 3)

    def test_bad_shape_rejected(self, rng):
        with pytest.raises(DataError):
            apply_transform(TransformKind.JITTER, np.zeros((10, 2)), PARAMS, rng)

    @given(kind=st.sampled_from(list(TransformKind)), seed=st.integers(0, 500))
    @settings(max_examples=40, deadline=None)
    def test_shape_preservation_property(self, kind, seed):
        w = window(seed=seed)
        out = apply_transform(kind, w, PARAMS, np.random.default_rng(seed))
        assert out.shape == w.shape
        assert np.isfinite(out).all()


class TestContrastivePair:
    def test_fixed_rng_is_deterministic(self):
        w = window()
        a1, b1 = sample_contrastive_pair(w, PARAMS, np.random.default_rng(5))
        a2, b2 = sample_contrastive_pair(w, PARAMS, np.random.default_rng(5))
        np.testing.assert_array_equal(a1, a2)
        np.testing.assert_array_equal(b1, b2)

    def test_shapes_match_input(self, rng):
        w = window(100)
        a, b = sample_contrastive_pair(w, PARAMS, rng)
        assert a.shape == w.shape and b.shape == w.shape

    def test_views_differ_from_input(self):
        w = window()
        differing = 0
        for seed in range(20):
            a, b = sample_contrastive_pair(w, PARAMS, np.random.default_rng(seed))
            differing += int(not np.array_equal(a, w)) + int(not np.array_equal(b, w))
        assert differing >= 38  # identity draws have probability ~0


class TestMultitaskSampler:
    def test_no_transform_applied_is_identity(self):
        w = window()
        out, bits = sample_multitask_batch(w, PARAMS, FixedBits(np.zeros(8, int)))
        np.testing.assert_array_equal(out, w)
        np.testing.assert_array_equal(bits, np.zeros(8, int))

    def test_negation_then_reversing_composition(self):
        w = window()
        bits = np.zeros(8, int)
        bits[TRANSFORM_ORDER.index(TransformKind.NEGATION)] = 1
        bits[TRANSFORM_ORDER.index(TransformKind.REVERSING)] = 1
        out, _ = sample_multitask_batch(w, PARAMS, FixedBits(bits))
        np.testing.assert_array_equal(out, -w[::-1])

    def test_expected_number_applied(self):
        rng = np.random.default_rng(0)
        w = window()
        total = 0
        for _ in range(100):
            _, bits = sample_multitask_batch(w, PARAMS, rng)
            total += bits.sum()
        # cheap smoke; the 10k-draw version lives in the acceptance suite
        assert 2.5 <= total / 100 <= 5.5

    def test_bits_recorded_match_bernoulli_draws(self, rng):
        _, bits = sample_multitask_batch(window(), PARAMS, rng)
        assert bits.shape == (8,)
        assert set(np.unique(bits)) <= {0, 1}
