import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import naive_features
from trafficdt.errors import InputError
from trafficdt.featex import (
    FEATURE_NAMES,
    Glcm,
    edge_pixel_count,
    extract_features,
    glcm,
    quantize8,
    segment_area,
    segment_perimeter,
    texture_features,
)

# 8 + 2 * sum_{d=1..7} (8 - d) / (1 + d), summed by hand
UNIFORM_HOMOGENEITY_SUM = 24.921428571428571


def block_mask(shape, top, left, h, w):
    m = np.zeros(shape, bool)
    m[top : top + h, left : left + w] = True
    return m


class TestSegmentFeatures:
    def test_area(self):
        assert segment_area(np.zeros((5, 5), bool)) == 0
        assert segment_area(np.ones((3, 3), bool)) == 9
        assert segment_area(block_mask((160, 110), 30, 40, 20, 20)) == 400

    def test_perimeter(self):
        assert segment_perimeter(block_mask((7, 7), 2, 2, 3, 3)) == 8
        assert segment_perimeter(block_mask((7, 7), 3, 3, 1, 1)) == 1
        assert segment_perimeter(np.zeros((7, 7), bool)) == 0

    def test_perimeter_counts_image_border(self):
        assert segment_perimeter(np.ones((3, 3), bool)) == 8
        assert segment_perimeter(np.ones((4, 5), bool)) == 14

    def test_edge_pixels(self):
        assert edge_pixel_count(np.full((10, 10), 90.0), np.ones((10, 10), bool)) == 0
        step = np.zeros((10, 10))
        step[:, 5:] = 255
        assert edge_pixel_count(step, np.ones((10, 10), bool)) == 20
        assert edge_pixel_count(step, np.zeros((10, 10), bool)) == 0

    def test_edge_shape_mismatch(self):
        with pytest.raises(InputError):
            edge_pixel_count(np.zeros((4, 4)), np.ones((4, 5), bool))


class TestQuantize:
    def test_levels(self):
        np.testing.assert_array_equal(quantize8(np.array([0, 255, 128, 31, 32, 224, 300, -3])),
                                      [0, 7, 4, 0, 1, 7, 7, 0])


class TestGlcm:
    def test_constant_region(self):
        g = glcm(np.full((6, 6), 3), np.ones((6, 6), bool), 45)
        expected = np.zeros((8, 8))
        expected[3, 3] = 1.0
        np.testing.assert_array_equal(g.probs, expected)
        assert g.pair_count == 25

    def test_two_by_two_tally(self):
        g = glcm(np.array([[0, 1], [2, 3]]), np.ones((2, 2), bool), 0)
        expected = np.zeros((8, 8))
        expected[0, 1] = expected[2, 3] = 0.5
        np.testing.assert_allclose(g.probs, expected, rtol=0, atol=1e-12)
        assert g.pair_count == 2

    @pytest.mark.parametrize("theta,pairs", [(45, [(2, 1)]), (90, [(2, 0), (3, 1)]), (135, [(3, 0)])])
    def test_offsets(self, theta, pairs):
        g = glcm(np.array([[0, 1], [2, 3]]), np.ones((2, 2), bool), theta)
        assert g.pair_count == len(pairs)
        for pair in pairs:
            assert g.probs[pair] == 1.0 / len(pairs)

    def test_background_neighbours_skipped(self):
        mask = np.array([[True, False], [True, True]])
        g = glcm(np.array([[0, 1], [2, 3]]), mask, 0)
        assert g.pair_count == 1 and g.probs[2, 3] == 1.0

    def test_empty_region(self):
        g = glcm(np.zeros((4, 4), int), np.zeros((4, 4), bool), 0)
        assert g.pair_count == 0 and not g.probs.any()

    def test_bad_orientation(self):
        with pytest.raises(InputError):
            glcm(np.zeros((2, 2), int), np.ones((2, 2), bool), 30)

    @settings(max_examples=50, deadline=None)
    @given(levels=arrays(np.int64, (6, 7), elements=st.integers(0, 7)),
           mask=arrays(bool, (6, 7)), theta=st.sampled_from([0, 45, 90, 135]))
    def test_normalized(self, levels, mask, theta):
        g = glcm(levels, mask, theta)
        if g.pair_count:
            assert abs(g.probs.sum() - 1) <= 1e-12
        else:
            assert not g.probs.any()

    @settings(max_examples=50, deadline=None)
    @given(levels=arrays(np.int64, (5, 6), elements=st.integers(0, 7)), mask=arrays(bool, (5, 6)))
    def test_ninety_degrees_is_transposed_zero_degrees(self, levels, mask):
        g90 = glcm(levels, mask, 90)
        g0t = glcm(levels.T, mask.T, 0)
        # pairs come out in the opposite order, so the matrices are transposes
        np.testing.assert_array_equal(g90.probs, g0t.probs.T)
        assert texture_features(g90) == pytest.approx(texture_features(g0t), abs=1e-15)


class TestTextureFeatures:
    def test_deterministic_texture(self):
        probs = np.zeros((8, 8))
        probs[5, 5] = 1
        assert texture_features(Glcm(probs, 0, 10)) == (1.0, 1.0, 0.0)

    def test_uniform(self):
        g, e, h = texture_features(Glcm(np.full((8, 8), 1 / 64), 0, 64))
        assert e == pytest.approx(1 / 64, abs=1e-12)
        assert h == pytest.approx(math.log(64), abs=1e-12)
        assert h == pytest.approx(4.1588830833596715, abs=1e-12)
        assert g == pytest.approx(UNIFORM_HOMOGENEITY_SUM / 64, abs=1e-12)
        assert g == pytest.approx(0.38940, abs=5e-6)

    def test_empty(self):
        assert texture_features(Glcm(np.zeros((8, 8)), 0, 0)) == (0.0, 0.0, 0.0)

    @settings(max_examples=50, deadline=None)
    @given(levels=arrays(np.int64, (6, 6), elements=st.integers(0, 7)), mask=arrays(bool, (6, 6)),
           theta=st.sampled_from([0, 45, 90, 135]))
    def test_ranges(self, levels, mask, theta):
        g = glcm(levels, mask, theta)
        hom, en, ent = texture_features(g)
        if g.pair_count == 0:
            return
        assert 0 <= hom <= 1 + 1e-12
        assert 1 / 64 - 1e-12 <= en <= 1 + 1e-12
        assert -1e-12 <= ent <= math.log(64) + 1e-12


class TestExtractFeatures:
    def test_names(self):
        assert FEATURE_NAMES[:4] == ("area", "perimeter", "pa_ratio", "edges")
        assert FEATURE_NAMES[4:7] == ("g0", "e0", "h0")
        assert FEATURE_NAMES[-3:] == ("g135", "e135", "h135")

    def test_empty_mask(self):
        f = extract_features(np.random.default_rng(0).integers(0, 256, (8, 8)), np.zeros((8, 8), bool))
        np.testing.assert_array_equal(f, np.zeros(16))

    def test_constant_frame(self):
        f = extract_features(np.full((9, 12), 200), np.ones((9, 12), bool))
        assert f[0] == 108 and f[3] == 0
        np.testing.assert_array_equal(f[4::3], 1.0)
        np.testing.assert_array_equal(f[5::3], 1.0)
        np.testing.assert_array_equal(f[6::3], 0.0)

    def test_random_block_matches_naive(self):
        rng = np.random.default_rng(7)
        frame = np.zeros((30, 30))
        frame[5:25, 5:25] = rng.integers(0, 8, (20, 20)) * 32 + 16
        mask = block_mask((30, 30), 5, 5, 20, 20)
        np.testing.assert_allclose(extract_features(frame, mask), naive_features(frame, mask),
                                   rtol=0, atol=1e-12)

    def test_shift_within_levels(self):
        rng = np.random.default_rng(3)
        levels = rng.integers(0, 8, (12, 12))
        frame = levels * 32 + 4.0
        mask = rng.random((12, 12)) > 0.3
        a = extract_features(frame, mask)
        b = extract_features(frame + 20, mask)
        np.testing.assert_array_equal(a[[0, 1, 2]], b[[0, 1, 2]])
        np.testing.assert_array_equal(a[4:], b[4:])
        assert a[3] == b[3]  # gradients ignore a constant offset

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            extract_features(np.zeros((4, 4)), np.ones((5, 4), bool))

    def test_invariants(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            frame = rng.integers(0, 256, (15, 17))
            mask = rng.random((15, 17)) > 0.4
            f = extract_features(frame, mask)
            assert f[0] >= 0 and f[1] <= f[0]
            assert f[2] == pytest.approx(f[1] / f[0])
