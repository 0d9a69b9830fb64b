"""Forward semantics of the non-conv primitives."""

import numpy as np
import pytest

from igdistill.nn import functional as F

from oracles import direct_batchnorm, hp_softmax, naive_matmul


class TestBatchNorm:
    def test_constant_channel_maps_to_beta(self, rng):
        x = np.full((4, 2, 3, 3), 7.0)
        gamma = np.array([1.5, 0.5])
        beta = np.array([0.3, -0.2])
        rm, rv = np.zeros(2), np.ones(2)
        y, _ = F.batchnorm_forward(x, gamma, beta, rm, rv, mode="train")
        # zero variance: eps keeps it finite and the output collapses to beta
        np.testing.assert_allclose(y[:, 0], 0.3, atol=1e-6)
        np.testing.assert_allclose(y[:, 1], -0.2, atol=1e-6)

    def test_standardized_input_is_near_identity(self, rng):
        x = rng.standard_normal((64, 3, 8, 8))
        x -= x.mean(axis=(0, 2, 3), keepdims=True)
        x /= x.std(axis=(0, 2, 3), keepdims=True)
        gamma, beta = np.ones(3), np.zeros(3)
        y, _ = F.batchnorm_forward(x, gamma, beta, np.zeros(3), np.ones(3),
                                   mode="train")
        np.testing.assert_allclose(y, x, atol=1e-3)

    def test_matches_direct_statistics_oracle(self, rng):
        x = rng.standard_normal((5, 3, 4, 4))
        gamma = rng.uniform(0.5, 1.5, 3)
        beta = rng.uniform(-1, 1, 3)
        y, _ = F.batchnorm_forward(x, gamma, beta, np.zeros(3), np.ones(3),
                                   mode="train")
        np.testing.assert_allclose(y, direct_batchnorm(x, gamma, beta),
                                   rtol=1e-6, atol=1e-6)

    def test_running_stats_momentum(self, rng):
        x = rng.standard_normal((8, 2, 4, 4)) * 3.0 + 1.0
        rm, rv = np.zeros(2), np.ones(2)
        F.batchnorm_forward(x, np.ones(2), np.zeros(2), rm, rv,
                            mode="train", momentum=0.9)
        m = 8 * 4 * 4
        expected_rm = 0.1 * x.mean(axis=(0, 2, 3))
        expected_rv = 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1)
        np.testing.assert_allclose(rm, expected_rm, rtol=1e-6)
        np.testing.assert_allclose(rv, expected_rv, rtol=1e-6)

    def test_eval_mode_uses_running_stats(self, rng):
        x = rng.standard_normal((2, 2, 3, 3))
        rm = np.array([0.5, -0.5])
        rv = np.array([4.0, 0.25])
        y, _ = F.batchnorm_forward(x, np.ones(2), np.zeros(2), rm, rv,
                                   mode="eval")
        expected = (x - rm[None, :, None, None]) / np.sqrt(
            rv[None, :, None, None] + 1e-5)
        np.testing.assert_allclose(y, expected, rtol=1e-6)

    def test_channel_mismatch_raises(self):
        with pytest.raises(F.ShapeError, match="gamma/beta"):
            F.batchnorm_forward(np.zeros((1, 3, 2, 2)), np.ones(2),
                                np.zeros(2), np.zeros(2), np.ones(2))

    def test_bad_mode(self):
        with pytest.raises(ValueError, match="mode"):
            F.batchnorm_forward(np.zeros((1, 1, 2, 2)), np.ones(1),
                                np.zeros(1), np.zeros(1), np.ones(1),
                                mode="test")


class TestReLU6:
    def test_definition(self):
        x = np.array([-1.0, 0.0, 3.0, 6.0, 9.0])
        np.testing.assert_array_equal(F.relu6_forward(x),
                                      [0.0, 0.0, 3.0, 6.0, 6.0])

    def test_identity_region(self, rng):
        x = rng.uniform(0.01, 5.99, (3, 4))
        np.testing.assert_array_equal(F.relu6_forward(x), x)

    def test_gradient_mask(self):
        x = np.array([-2.0, 1.0, 5.0, 8.0])
        dy = np.ones(4)
        np.testing.assert_array_equal(F.relu6_backward(x, dy),
                                      [0.0, 1.0, 1.0, 0.0])


class TestDense:
    def test_identity_weight(self, rng):
        x = rng.standard_normal((3, 4))
        y = F.dense_forward(x, np.eye(4), np.zeros(4))
        np.testing.assert_allclose(y, x)

    def test_zero_weight_broadcasts_bias(self, rng):
        x = rng.standard_normal((3, 4))
        b = np.array([1.0, -2.0])
        y = F.dense_forward(x, np.zeros((4, 2)), b)
        np.testing.assert_array_equal(y, np.tile(b, (3, 1)))

    def test_matches_naive_matmul(self, rng):
        x = rng.standard_normal((4, 6))
        w = rng.standard_normal((6, 3))
        b = rng.standard_normal(3)
        np.testing.assert_allclose(F.dense_forward(x, w, b),
                                   naive_matmul(x, w, b), rtol=1e-6)

    def test_dim_mismatch(self):
        with pytest.raises(F.ShapeError):
            F.dense_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))
        with pytest.raises(F.ShapeError):
            F.dense_forward(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros(3))


class TestSoftmaxTemperature:
    def test_symmetry(self):
        for t in (0.5, 1.0, 2.5, 10.0):
            p = F.softmax_with_temperature(np.array([[0.0, 0.0]]), t)
            np.testing.assert_allclose(p, [[0.5, 0.5]])

    def test_worked_temperature_ratio(self):
        # a logit of 4 at T=2.5 carries weight exp(4/2.5) ~ 4.95 relative to
        # a zero logit
        p = F.softmax_with_temperature(np.array([[4.0, 0.0]]), 2.5)
        ratio = p[0, 0] / p[0, 1]
        assert abs(ratio - np.exp(4.0 / 2.5)) < 1e-9
        assert abs(ratio - 4.95) < 0.01
        p1 = F.softmax_with_temperature(np.array([[4.0, 0.0]]), 1.0)
        assert abs(p1[0, 0] / p1[0, 1] - np.exp(4.0)) < 1e-9

    def test_extreme_logits_no_overflow(self):
        p = F.softmax_with_temperature(np.array([[1000.0, 0.0]]), 1.0)
        assert np.isfinite(p).all()
        np.testing.assert_allclose(p, [[1.0, 0.0]], atol=1e-300)

    def test_rows_sum_to_one(self, rng):
        logits = rng.standard_normal((50, 10)) * 10
        for t in (0.7, 1.0, 2.5, 4.0):
            p = F.softmax_with_temperature(logits, t)
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_shift_invariance(self, rng):
        logits = rng.standard_normal((5, 7))
        p1 = F.softmax_with_temperature(logits, 2.0)
        p2 = F.softmax_with_temperature(logits + 123.4, 2.0)
        np.testing.assert_allclose(p1, p2, atol=1e-12)

    def test_high_temperature_flattens(self, rng):
        logits = rng.standard_normal((1, 6))
        p = F.softmax_with_temperature(logits, 1e6)
        np.testing.assert_allclose(p, 1.0 / 6.0, atol=1e-5)

    def test_matches_high_precision_oracle(self, rng):
        logits = rng.standard_normal(8) * 5
        p = F.softmax_with_temperature(logits[None, :].astype(np.float64),
                                       2.5)[0]
        expected = [float(v) for v in hp_softmax(logits, 2.5)]
        np.testing.assert_allclose(p, expected, rtol=1e-12)

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError, match="temperature"):
            F.softmax_with_temperature(np.zeros((1, 2)), 0.0)
        with pytest.raises(ValueError, match="temperature"):
            F.softmax_with_temperature(np.zeros((1, 2)), -1.5)


class TestGlobalAvgPool:
    def test_mean_semantics(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        np.testing.assert_allclose(F.global_avg_pool_forward(x),
                                   x.mean(axis=(2, 3)))

    def test_backward_spreads_uniformly(self):
        dy = np.array([[1.0, 2.0]])
        dx = F.global_avg_pool_backward(dy, 2, 2)
        np.testing.assert_allclose(dx[0, 0], 0.25)
        np.testing.assert_allclose(dx[0, 1], 0.5)
