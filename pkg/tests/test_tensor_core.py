import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rienhance.errors import DegenerateVector, DimensionMismatch, NonFiniteEvaluation
from rienhance.losses import smooth_l1
from rienhance.tensor_core import cosine, cosine_matrix, finite_diff_check, l2_normalize, normalize_rows

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def vectors(dim):
    return arrays(np.float64, dim, elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-3)


class TestNormalize:
    def test_three_four(self):
        np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)

    def test_unit_vector_unchanged(self):
        np.testing.assert_array_equal(l2_normalize([1.0, 0.0]), [1.0, 0.0])

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateVector):
            l2_normalize([0.0, 0.0])

    def test_rows_with_zero_row_rejected(self):
        with pytest.raises(DegenerateVector):
            normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteEvaluation):
            l2_normalize([np.nan, 1.0])

    @given(vectors(5))
    def test_unit_norm_and_direction(self, v):
        u = l2_normalize(v)
        assert abs(np.linalg.norm(u) - 1.0) < 1e-12
        np.testing.assert_allclose(u * np.linalg.norm(v), v, rtol=1e-12, atol=1e-9)


class TestCosine:
    def test_identical(self):
        assert cosine([1.0, 0.0], [1.0, 0.0]) == 1.0

    def test_orthogonal(self):
        assert cosine([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_forty_five_degrees(self):
        assert cosine([1.0, 1.0], [1.0, 0.0]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine([1.0, 0.0], [1.0, 0.0, 0.0])

    def test_degenerate(self):
        with pytest.raises(DegenerateVector):
            cosine([0.0, 0.0], [1.0, 0.0])

    @given(vectors(4), vectors(4))
    def test_symmetric_and_bounded(self, a, b):
        c = cosine(a, b)
        assert c == cosine(b, a)
        assert -1.0 <= c <= 1.0

    @given(vectors(6))
    def test_with_own_normalization(self, a):
        assert abs(cosine(a, l2_normalize(a)) - 1.0) < 1e-12

    def test_matrix_matches_pairwise(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(4, 5)), rng.normal(size=(3, 5))
        m = cosine_matrix(a, b)
        for i in range(4):
            for j in range(3):
                assert m[i, j] == pytest.approx(cosine(a[i], b[j]), abs=1e-14)


class TestFiniteDiffCheck:
    def test_quadratic(self):
        r = finite_diff_check(lambda x: float(x @ x), [2.0, 4.0], [1.0, 2.0], h=1e-5)
        assert r.passed

    def test_linear_is_exact(self):
        r = finite_diff_check(lambda x: float(x[0]), [1.0, 0.0], [0.3, -2.0])
        assert r.passed and r.max_rel_error < 1e-9

    def test_wrong_sign_near_kink_fails(self):
        xi = 1.0
        xh = xi + 0.75 + 0.01  # just past the switch into the linear branch
        _, g = smooth_l1(xi, xh, 0.75)
        r = finite_diff_check(lambda z: smooth_l1(xi, float(z[0]), 0.75)[0], [-g], [xh])
        assert not r.passed
        assert r.worst_index == 0

    def test_report_points_at_worst_coordinate(self):
        r = finite_diff_check(lambda x: float(x @ x), [2.0, 4.5, 6.0], [1.0, 2.0, 3.0])
        assert r.worst_index == 1 and not r.passed

    def test_non_finite_function(self):
        with pytest.raises(NonFiniteEvaluation):
            finite_diff_check(lambda x: float("nan"), [0.0], [1.0])

    def test_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_check(lambda x: 0.0, [0.0], [1.0], h=0.0)

    def test_absolute_floor_ignores_rounding_on_zero_gradient(self):
        # true gradient in x1 is 0; numeric estimate carries ~1e-11 rounding
        f = lambda x: float(1e3 * x[0] ** 2 + 0.0 * x[1])  # noqa: E731
        r = finite_diff_check(f, [2e3 * 1.7, 0.0], [1.7, 5.0])
        assert r.passed

    @settings(max_examples=30)
    @given(arrays(np.float64, 3, elements=st.floats(-3, 3)))
    def test_passed_iff_below_tolerance(self, x):
        r = finite_diff_check(lambda z: float(np.sum(np.sin(z))), np.cos(x) + 1e-3, x, tol=1e-4)
        assert r.passed == (r.max_rel_error < 1e-4)
