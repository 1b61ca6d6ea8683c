import math

import numpy as np
import pytest

from cen.numerics import (
    affine,
    finite_diff_grad,
    softmax_rows,
    softmax_tempered,
)


class TestAffine:
    def test_identity(self):
        out = affine(np.eye(2), np.array([3.0, 4.0]), np.zeros(2))
        np.testing.assert_array_equal(out, [3.0, 4.0])

    def test_zero_weights_return_bias(self):
        out = affine(np.zeros((2, 2)), np.array([7.0, -1.0]), np.array([1.0, 2.0]))
        np.testing.assert_array_equal(out, [1.0, 2.0])

    def test_hand_arithmetic(self):
        W = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = affine(W, np.array([1.0, 1.0]), np.array([0.5, -0.5]))
        np.testing.assert_allclose(out, [3.5, 6.5], atol=1e-15)

    def test_dimension_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 2\).*\(3,\)"):
            affine(np.eye(2), np.ones(3), np.zeros(2))
        with pytest.raises(ValueError, match=r"\(2, 2\).*\(3,\)"):
            affine(np.eye(2), np.ones(2), np.zeros(3))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            affine(np.eye(2), np.array([np.nan, 0.0]), np.zeros(2))

    def test_linearity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            W = rng.normal(size=(4, 3))
            x, y = rng.normal(size=3), rng.normal(size=3)
            a, b = rng.normal(size=2)
            lhs = affine(W, a * x + b * y, np.zeros(4))
            rhs = a * affine(W, x, np.zeros(4)) + b * affine(W, y, np.zeros(4))
            np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestSoftmaxTempered:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax_tempered(np.zeros(2), 1.0), [0.5, 0.5], atol=1e-15)

    def test_closed_form_log2(self):
        p = softmax_tempered(np.array([math.log(2.0), 0.0]), 1.0)
        np.testing.assert_allclose(p, [2 / 3, 1 / 3], atol=1e-12)

    def test_closed_form_temperature_softening(self):
        p = softmax_tempered(np.array([10.0, 0.0]), 10.0)
        e = math.e
        np.testing.assert_allclose(p, [e / (e + 1), 1 / (e + 1)], atol=1e-12)

    def test_sum_one_and_positive(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            z = rng.normal(scale=10.0, size=rng.integers(2, 20))
            tau = float(rng.uniform(0.1, 10.0))
            p = softmax_tempered(z, tau)
            assert abs(p.sum() - 1.0) <= 1e-12
            assert np.all(p > 0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            z = rng.normal(size=6)
            c = float(rng.uniform(-100, 100))
            p1 = softmax_tempered(z, 2.0)
            p2 = softmax_tempered(z + c, 2.0)
            np.testing.assert_allclose(p1, p2, atol=1e-12)

    def test_softening_monotonic_in_tau(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            z = rng.normal(scale=3.0, size=8)
            z[0] += 1.0  # ensure non-constant
            peaks = [softmax_tempered(z, tau).max() for tau in (0.5, 1.0, 2.0, 4.0, 8.0)]
            assert all(a > b for a, b in zip(peaks, peaks[1:]))

    def test_overflow_safety(self):
        p = softmax_tempered(np.array([1000.0, 0.0]), 1.0)
        assert np.all(np.isfinite(p))
        assert p[0] > 0.999

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_invalid_tau(self, tau):
        with pytest.raises(ValueError, match="tau"):
            softmax_tempered(np.zeros(2), tau)

    def test_rows_variant_matches(self):
        rng = np.random.default_rng(4)
        Z = rng.normal(size=(5, 7))
        P = softmax_rows(Z, 2.5)
        for i in range(5):
            np.testing.assert_allclose(P[i], softmax_tempered(Z[i], 2.5), atol=1e-14)


class TestFiniteDiffGrad:
    def test_quadratic(self):
        g = finite_diff_grad(lambda t: float(t @ t), np.array([1.0]), 1e-5)
        np.testing.assert_allclose(g, [2.0], atol=1e-8)

    def test_constant_gives_zeros(self):
        g = finite_diff_grad(lambda t: 1.25, np.ones(4), 1e-5)
        np.testing.assert_array_equal(g, np.zeros(4))

    @pytest.mark.parametrize("eps", [1e-8, 1e-2])
    def test_eps_window(self, eps):
        with pytest.raises(ValueError, match="eps"):
            finite_diff_grad(lambda t: 0.0, np.ones(2), eps)

    def test_non_finite_loss_names_coordinate(self):
        def bad(t):
            return float("nan") if t[1] != 1.0 else 0.0

        with pytest.raises(ValueError, match="coordinate 1"):
            finite_diff_grad(bad, np.ones(3), 1e-5)
