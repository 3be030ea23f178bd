"""Depth-similarity weighting functions and weight fields."""

import numpy as np
import pytest

from dhinet.depth_weighting import (DepthMap, WeightingFunction, WeightingKind,
                                    weight, weight_field, weight_field_batch,
                                    weight_values)

ALL_KINDS = [WeightingKind.parse(f.value) for f in WeightingFunction]
STANDARD_KINDS = [k for k in ALL_KINDS
                  if k.function is not WeightingFunction.WENDLAND_C2_LITERAL]


class TestScalarValues:
    @pytest.mark.parametrize("kind", STANDARD_KINDS, ids=lambda k: k.function.value)
    def test_value_one_at_zero_difference(self, kind):
        assert weight(kind, 3.0, 3.0) == 1.0

    def test_literal_wendland_is_two_at_zero(self):
        # The literal polynomial (1 - d^4) + (4d + 1) evaluates to 2 at d=0,
        # which is why it is kept only as a flagged comparison variant.
        kind = WeightingKind.parse("wendland-c2-literal")
        assert weight(kind, 5.0, 5.0) == 2.0

    def test_inverse_multiquadric_known_point(self):
        # at gamma*delta = 1 the weight is 1/sqrt(2)
        kind = WeightingKind(WeightingFunction.INVERSE_MULTIQUADRIC, gamma=2.0)
        assert weight(kind, 1.0, 0.5) == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-15)

    def test_gaussian_known_point(self):
        kind = WeightingKind(WeightingFunction.GAUSSIAN, gamma=1.0)
        assert weight(kind, 2.0, 1.0) == pytest.approx(np.exp(-1.0), abs=1e-15)

    def test_triangular_hand_values(self):
        kind = WeightingKind.parse("triangular")
        assert weight(kind, 1.0, 0.75) == pytest.approx(0.75)
        assert weight(kind, 1.0, 2.0) == 0.0
        assert weight(kind, 0.0, 5.0) == 0.0

    def test_wendland_hand_value(self):
        # (1 - 0.5)^4 * (4*0.5 + 1) = 0.0625 * 3 = 0.1875
        kind = WeightingKind.parse("wendland-c2")
        assert weight(kind, 1.0, 0.5) == pytest.approx(0.1875, abs=1e-15)

    def test_default_gamma(self):
        assert WeightingKind.parse("inverse-multiquadric").gamma == 9.5

    def test_gamma_must_be_positive_for_scaled_kinds(self):
        with pytest.raises(ValueError, match="gamma"):
            WeightingKind(WeightingFunction.GAUSSIAN, gamma=0.0)
        # unscaled kinds ignore gamma entirely
        WeightingKind(WeightingFunction.TRIANGULAR, gamma=-1.0)

    def test_non_finite_depth_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            weight(WeightingKind.parse("gaussian"), np.nan, 1.0)


class TestBulkProperties:
    deltas = np.random.default_rng(2024).uniform(-3.0, 3.0, size=10_000)

    @pytest.mark.parametrize("kind", STANDARD_KINDS, ids=lambda k: k.function.value)
    def test_bounded_between_zero_and_one(self, kind):
        vals = weight_values(kind, self.deltas)
        assert np.all(vals >= 0.0) and np.all(vals <= 1.0)

    @pytest.mark.parametrize("name", ["inverse-multiquadric", "gaussian"])
    def test_strictly_decreasing_in_abs_delta(self, name):
        # The Gaussian at the default sharpness underflows to exactly 0.0
        # past |delta| ~ 2.8, so strictness is asserted on the float64-
        # representable range and non-increase everywhere else.
        kind = WeightingKind.parse(name)
        mags = np.sort(np.abs(self.deltas))
        vals = weight_values(kind, mags)
        assert np.all(np.diff(vals) <= 0)
        positive = vals > 1e-300
        assert positive.sum() > 5000
        assert np.all(np.diff(vals[positive]) < 0)
        # and symmetric in the sign of the difference
        np.testing.assert_array_equal(weight_values(kind, self.deltas),
                                      weight_values(kind, -self.deltas))

    def test_triangular_support_is_exactly_unit_interval(self):
        kind = WeightingKind.parse("triangular")
        vals = weight_values(kind, self.deltas)
        inside = np.abs(self.deltas) < 1.0
        assert np.all(vals[inside] > 0.0)
        assert np.all(vals[~inside] == 0.0)
        assert weight_values(kind, np.array(1.0)) == 0.0

    def test_wendland_smooth_compact_support(self):
        kind = WeightingKind.parse("wendland-c2")
        vals = weight_values(kind, self.deltas)
        assert np.all(vals[np.abs(self.deltas) >= 1.0] == 0.0)
        # C2 smoothness at the boundary: value and slope both vanish
        eps = 1e-7
        near = weight_values(kind, np.array([1.0 - eps]))
        assert near[0] < 1e-20


class TestWeightField:
    def test_hand_case_two_by_two(self):
        depth = DepthMap(np.array([[1.0, 1.0], [1.0, 2.0]]))
        kind = WeightingKind.parse("triangular")
        field = weight_field(depth, 3, kind)
        assert field.shape == (2, 2, 3, 3)
        # center position (0,0): the only unequal in-bounds neighbor is (1,1)
        f00 = field[0, 0]
        assert f00[1, 1] == 1.0          # self
        assert f00[1, 2] == 1.0          # right neighbor, same depth
        assert f00[2, 2] == 0.0          # diagonal neighbor differs by 1.0
        assert f00[0, 0] == 1.0          # out of bounds -> exactly 1
        # center position (1,1) with depth 2: all three real neighbors differ by 1
        f11 = field[1, 1]
        assert f11[1, 1] == 1.0
        assert f11[0, 0] == 0.0 and f11[0, 1] == 0.0 and f11[1, 0] == 0.0
        assert f11[2, 2] == 1.0          # out of bounds

    def test_single_pixel_field_is_all_ones(self):
        field = weight_field(DepthMap(np.array([[4.2]])), 5,
                             WeightingKind.parse("inverse-multiquadric"))
        np.testing.assert_array_equal(field, np.ones((1, 1, 5, 5)))

    def test_constant_depth_field_is_all_ones(self):
        for kind in STANDARD_KINDS:
            field = weight_field(DepthMap(np.full((4, 5), 2.5)), 3, kind)
            np.testing.assert_array_equal(field, np.ones((4, 5, 3, 3)))

    def test_batch_matches_per_image(self):
        rng = np.random.default_rng(0)
        depth = rng.uniform(0.5, 8.0, size=(3, 6, 7))
        kind = WeightingKind.parse("gaussian")
        batched = weight_field_batch(depth, 3, kind)
        for b in range(3):
            np.testing.assert_array_equal(batched[b],
                                          weight_field(DepthMap(depth[b]), 3, kind))

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            weight_field(DepthMap(np.ones((3, 3))), 2, WeightingKind.parse("gaussian"))

    def test_depth_map_validation(self):
        with pytest.raises(ValueError, match="rank 2"):
            DepthMap(np.ones(3))
        with pytest.raises(ValueError, match="finite"):
            DepthMap(np.array([[np.inf]]))
        with pytest.raises(ValueError, match="negative"):
            DepthMap(np.array([[-0.1]]))
