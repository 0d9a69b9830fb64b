"""Objective functions against high-precision oracles, plus their analytic
gradients against finite differences."""

import numpy as np
import pytest

from igdistill import losses
from igdistill.losses import HyperParams, PRESETS
from igdistill.nn import functional as F
from igdistill.nn.gradcheck import max_rel_error, numerical_gradient

from oracles import hand_attention_map, hp_cross_entropy, hp_kd_loss

# high-precision value of kd_loss([1,0], [0,1], T=2): T^2 * KL = 2*tanh(1/4)
KD_HAND_VALUE = 0.48983732480741826


class TestCrossEntropy:
    def test_peaked_logits_give_near_zero_loss(self):
        logits = np.array([[100.0, 0.0, 0.0], [0.0, 100.0, 0.0]])
        assert losses.cross_entropy(logits, [0, 1]) < 1e-9

    def test_uniform_logits_ln_k(self):
        logits = np.zeros((4, 10))
        assert abs(losses.cross_entropy(logits, [0, 3, 5, 9])
                   - np.log(10)) < 1e-12

    def test_matches_high_precision_oracle(self, rng):
        logits = rng.standard_normal((6, 5)) * 4
        labels = rng.integers(0, 5, 6)
        ours = losses.cross_entropy(logits, labels)
        assert abs(ours - hp_cross_entropy(logits, labels)) < 1e-10

    def test_out_of_range_label(self):
        with pytest.raises(ValueError, match="labels"):
            losses.cross_entropy(np.zeros((2, 3)), [0, 3])

    def test_gradient_matches_finite_differences(self, rng):
        logits = rng.standard_normal((3, 4))
        labels = np.array([1, 0, 3])
        grad = losses.cross_entropy_grad(logits, labels)
        num = numerical_gradient(
            lambda z: losses.cross_entropy(z, labels), logits)
        assert max_rel_error(grad, num) < 1e-6


class TestKDLoss:
    def test_zero_for_identical_logits(self, rng):
        for _ in range(5):
            z = rng.standard_normal((4, 10)) * 3
            for t in (1.0, 2.5, 4.0):
                assert losses.kd_loss(z, z, t) == pytest.approx(0.0,
                                                                abs=1e-12)

    def test_hand_case_matches_high_precision_oracle(self):
        zs = np.array([[1.0, 0.0]])
        zt = np.array([[0.0, 1.0]])
        ours = losses.kd_loss(zs, zt, 2.0)
        oracle = hp_kd_loss(zs, zt, 2.0)
        assert abs(ours - oracle) < 1e-12
        assert abs(ours - KD_HAND_VALUE) < 1e-12
        assert abs(ours - 2.0 * np.tanh(0.25)) < 1e-12

    def test_random_cases_match_oracle(self, rng):
        zs = rng.standard_normal((3, 6)) * 3
        zt = rng.standard_normal((3, 6)) * 3
        for t in (1.0, 2.5):
            assert abs(losses.kd_loss(zs, zt, t)
                       - hp_kd_loss(zs, zt, t)) < 1e-10

    def test_nonnegative_over_random_pairs(self, rng):
        for _ in range(1000):
            zs = rng.standard_normal((1, 5)) * 5
            zt = rng.standard_normal((1, 5)) * 5
            assert losses.kd_loss(zs, zt, 2.5) >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="logit shapes"):
            losses.kd_loss(np.zeros((2, 3)), np.zeros((2, 4)), 2.0)

    def test_nonpositive_temperature(self):
        with pytest.raises(ValueError, match="temperature"):
            losses.kd_loss(np.zeros((1, 2)), np.zeros((1, 2)), 0.0)

    def test_batch_mean_reduction(self, rng):
        """Duplicating the batch leaves the value unchanged (mean over N)."""
        zs = rng.standard_normal((2, 4))
        zt = rng.standard_normal((2, 4))
        single = losses.kd_loss(zs, zt, 2.0)
        doubled = losses.kd_loss(np.vstack([zs, zs]), np.vstack([zt, zt]),
                                 2.0)
        assert abs(single - doubled) < 1e-12

    def test_gradient_matches_finite_differences(self, rng):
        zs = rng.standard_normal((3, 5))
        zt = rng.standard_normal((3, 5))
        grad = losses.kd_loss_grad(zs, zt, 2.5)
        num = numerical_gradient(lambda z: losses.kd_loss(z, zt, 2.5), zs)
        assert max_rel_error(grad, num) < 1e-6

    def test_gradient_descent_recovers_teacher_distribution(self):
        """argmin over student logits drives the softened KL to ~0."""
        zt = np.array([[2.0, 0.5, -1.0]])
        zs = np.zeros((1, 3))
        for _ in range(4000):
            zs -= 0.5 * losses.kd_loss_grad(zs, zt, 2.5)
        assert losses.kd_loss(zs, zt, 2.5) < 1e-8
        ps = F.softmax_with_temperature(zs, 2.5)
        pt = F.softmax_with_temperature(zt, 2.5)
        np.testing.assert_allclose(ps, pt, atol=1e-5)


class TestCombineAndTotal:
    def test_alpha_limits(self):
        assert losses.combine_kd(2.0, 0.5, 0.0) == 2.0
        assert losses.combine_kd(2.0, 0.5, 1.0) == 0.5

    def test_weighted_arithmetic(self):
        assert abs(losses.combine_kd(2.0, 0.5, 0.01) - 1.985) < 1e-12

    def test_alpha_range_enforced(self):
        with pytest.raises(ValueError, match="alpha"):
            losses.combine_kd(1.0, 1.0, 1.5)

    def test_total_loss_composition(self):
        breakdown = losses.total_loss(2.0, 0.5, 0.1, alpha=0.01, gamma=0.8)
        assert abs(breakdown.total - 2.065) < 1e-12
        assert breakdown.ce == 2.0 and breakdown.kl == 0.5
        assert breakdown.at == 0.1

    def test_gamma_zero_recovers_plain_combination(self, rng):
        ce, kl, at = 1.3, 0.4, 7.7
        breakdown = losses.total_loss(ce, kl, at, alpha=0.25, gamma=0.0)
        assert breakdown.total == losses.combine_kd(ce, kl, 0.25)

    def test_pure_cross_entropy_limit(self):
        breakdown = losses.total_loss(3.3, 9.9, 5.5, alpha=0.0, gamma=0.0)
        assert breakdown.total == 3.3

    def test_parts_reproduce_total(self, rng):
        for _ in range(20):
            ce, kl, at = rng.random(3) * 5
            alpha, gamma = rng.random(2)
            b = losses.total_loss(ce, kl, at, alpha, gamma)
            expected = (1 - alpha) * b.ce + alpha * b.kl + gamma * b.at
            assert abs(b.total - expected) < 1e-9


class TestAttentionMap:
    def test_uniform_activation(self):
        amap = losses.attention_map(np.ones((1, 1, 2, 2)), power=2)
        np.testing.assert_allclose(amap, np.full((1, 2, 2), 0.5))

    def test_zero_activation_maps_to_zeros(self):
        amap = losses.attention_map(np.zeros((2, 3, 4, 4)), power=2)
        np.testing.assert_array_equal(amap, np.zeros((2, 4, 4)))

    def test_two_channel_hand_case(self):
        act = np.array([[[[1.0, -2.0], [0.5, 0.0]],
                         [[3.0, 1.0], [-1.0, 2.0]]]])
        amap = losses.attention_map(act, power=2)
        np.testing.assert_allclose(amap, hand_attention_map(act, 2),
                                   rtol=1e-10)

    def test_unit_norm(self, rng):
        act = rng.standard_normal((3, 4, 5, 5))
        amap = losses.attention_map(act, power=2)
        norms = np.sqrt((amap ** 2).sum(axis=(1, 2)))
        np.testing.assert_allclose(norms, 1.0, atol=1e-9)

    def test_power_validated(self):
        with pytest.raises(ValueError, match="power"):
            losses.attention_map(np.ones((1, 1, 2, 2)), power=0)

    def test_gradient_matches_finite_differences(self, rng):
        act = rng.standard_normal((2, 3, 4, 4)) + 0.1
        target = losses.attention_map(rng.standard_normal((2, 3, 4, 4)), 2)

        def head(a):
            return losses.at_loss(losses.attention_map(a, 2), target)

        amap, cache = losses.attention_map_with_cache(act, 2)
        dmap = losses.at_loss_grad(amap, target)
        da = losses.attention_map_backward(cache, dmap)
        assert max_rel_error(da, numerical_gradient(head, act)) < 1e-4


class TestATLoss:
    def test_zero_for_identical_maps(self, rng):
        a = losses.attention_map(rng.standard_normal((2, 3, 4, 4)), 2)
        assert losses.at_loss(a, a.copy()) == 0.0

    def test_unit_norm_bound(self, rng):
        for _ in range(50):
            a = losses.attention_map(rng.standard_normal((2, 2, 3, 3)), 2)
            b = losses.attention_map(rng.standard_normal((2, 2, 3, 3)), 2)
            assert losses.at_loss(a, b) <= 4.0 + 1e-12

    def test_matches_direct_summation(self, rng):
        a = rng.random((3, 4, 4))
        b = rng.random((3, 4, 4))
        direct = sum((a[i, j, k] - b[i, j, k]) ** 2
                     for i in range(3) for j in range(4)
                     for k in range(4)) / 3
        assert abs(losses.at_loss(a, b) - direct) < 1e-10

    def test_spatial_mismatch_is_an_error(self):
        with pytest.raises(ValueError, match="tap points"):
            losses.at_loss(np.zeros((1, 4, 4)), np.zeros((1, 8, 8)))


class TestHyperParams:
    def test_defaults_are_the_tuned_optimum(self):
        hp = HyperParams()
        assert (hp.alpha, hp.temperature, hp.gamma, hp.overlay_p) == \
            (0.01, 2.5, 0.8, 0.1)
        assert hp.attention_power == 2
        assert hp.lr == 0.001 and hp.epochs == 100

    def test_presets(self):
        assert PRESETS["supplement-default"].alpha == 0.5
        assert PRESETS["supplement-default"].temperature == 2.0
        assert PRESETS["paper-optimal"] == HyperParams()

    @pytest.mark.parametrize("field,value", [
        ("alpha", -0.1), ("alpha", 1.1), ("temperature", 0.0),
        ("gamma", 2.0), ("overlay_p", -0.5), ("attention_power", 0),
    ])
    def test_range_validation(self, field, value):
        with pytest.raises(ValueError):
            HyperParams(**{field: value})


def test_temperature_softening_increases_entropy(rng):
    logits = rng.standard_normal((1, 8)) * 4

    def entropy(t):
        p = F.softmax_with_temperature(logits, t)
        return float(-(p * np.log(np.maximum(p, 1e-300))).sum())

    grid = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 8.0, 20.0]
    values = [entropy(t) for t in grid]
    assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))


def test_eq1_eq2_composed_gradients(rng):
    """Gradients of the weighted objectives w.r.t. student logits and
    attention activations, against finite differences at float64."""
    alpha, gamma, t = 0.01, 0.8, 2.5
    zs = rng.standard_normal((4, 10))
    zt = rng.standard_normal((4, 10))
    labels = rng.integers(0, 10, 4)
    act = rng.standard_normal((4, 3, 4, 4)) + 0.2
    a_teacher = losses.attention_map(rng.standard_normal((4, 3, 4, 4)), 2)

    def eq1(z):
        return losses.combine_kd(losses.cross_entropy(z, labels),
                                 losses.kd_loss(z, zt, t), alpha)

    analytic = ((1 - alpha) * losses.cross_entropy_grad(zs, labels)
                + alpha * losses.kd_loss_grad(zs, zt, t))
    assert max_rel_error(analytic, numerical_gradient(eq1, zs)) < 1e-4

    def eq2_wrt_act(a):
        amap = losses.attention_map(a, 2)
        return losses.total_loss(
            losses.cross_entropy(zs, labels), losses.kd_loss(zs, zt, t),
            losses.at_loss(amap, a_teacher), alpha, gamma).total

    amap, cache = losses.attention_map_with_cache(act, 2)
    da = losses.attention_map_backward(
        cache, gamma * losses.at_loss_grad(amap, a_teacher))
    assert max_rel_error(da, numerical_gradient(eq2_wrt_act, act)) < 1e-4
