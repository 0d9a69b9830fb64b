"""Finite-difference verification of every backward pass.

Checks use a random linear head L = <R, layer(x)> so that gradient
components stay well scaled, float64 arithmetic, central differences with
h = 1e-5, and inputs sampled away from the ReLU6 kinks.
"""

import numpy as np
import pytest

from igdistill import blocks, losses
from igdistill.nn import functional as F
from igdistill.nn.gradcheck import (max_rel_error, numerical_gradient,
                                    sample_away_from_kinks)
from igdistill.nn.layers import (BatchNorm2d, Conv2d, Dense,
                                 DepthwiseConv2d, GlobalAvgPool, ReLU6)

TOL = 1e-4


def check_layer(layer, x, rng, mode="train", params=True):
    """Compare layer.backward against numerical gradients of <R, forward>."""
    r = rng.standard_normal(layer.forward(x, mode).shape)

    def head(_):
        return float((layer.forward(x, mode) * r).sum())

    layer.forward(x, mode)
    dx = layer.backward(r)
    worst = max_rel_error(dx, numerical_gradient(head, x))
    if params:
        for _, p in layer.parameters():
            def head_p(_p, p=p):
                return float((layer.forward(x, mode) * r).sum())
            worst = max(worst,
                        max_rel_error(p.grad,
                                      numerical_gradient(head_p, p.data)))
    return worst


def test_conv2d(rng):
    layer = Conv2d(3, 4, 3, stride=2, padding=1, rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 3, 6, 6))
    assert check_layer(layer, x, rng) < TOL


def test_conv2d_1x1(rng):
    layer = Conv2d(4, 2, 1, rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 4, 5, 5))
    assert check_layer(layer, x, rng) < TOL


def test_depthwise(rng):
    layer = DepthwiseConv2d(3, 3, stride=2, padding=1, rng=rng,
                            dtype=np.float64)
    x = rng.standard_normal((2, 3, 6, 6))
    assert check_layer(layer, x, rng) < TOL


def test_batchnorm_train(rng):
    layer = BatchNorm2d(3, dtype=np.float64)
    layer.gamma.data = rng.uniform(0.5, 1.5, 3)
    layer.beta.data = rng.uniform(-1.0, 1.0, 3)
    x = rng.standard_normal((4, 3, 5, 5))
    assert check_layer(layer, x, rng, mode="train") < TOL


def test_batchnorm_eval(rng):
    layer = BatchNorm2d(3, dtype=np.float64)
    layer.running_mean = rng.standard_normal(3)
    layer.running_var = rng.uniform(0.5, 2.0, 3)
    x = rng.standard_normal((4, 3, 5, 5))
    assert check_layer(layer, x, rng, mode="eval") < TOL


def test_relu6_away_from_kinks(rng):
    layer = ReLU6()
    x = sample_away_from_kinks(rng, (4, 3, 5, 5), -3.0, 9.0, margin=1e-3)
    assert check_layer(layer, x, rng) < TOL


def test_dense(rng):
    layer = Dense(6, 4, rng=rng, dtype=np.float64)
    x = rng.standard_normal((3, 6))
    assert check_layer(layer, x, rng) < TOL


def test_global_avg_pool(rng):
    layer = GlobalAvgPool()
    x = rng.standard_normal((2, 3, 4, 4))
    assert check_layer(layer, x, rng) < TOL


def test_backward_without_forward_raises(rng):
    layer = Conv2d(2, 2, 3, rng=rng)
    with pytest.raises(RuntimeError, match="without a preceding forward"):
        layer.backward(np.zeros((1, 2, 3, 3)))


def test_zero_upstream_gives_zero_grads(rng):
    layer = Conv2d(2, 3, 3, padding=1, rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 2, 5, 5))
    y = layer.forward(x, "train")
    dx = layer.backward(np.zeros_like(y))
    assert not dx.any()
    assert not layer.weight.grad.any()


def test_dense_softmax_ce_chain(rng):
    """Analytic (softmax - onehot) gradient through a dense layer against
    finite differences."""
    layer = Dense(5, 3, rng=rng, dtype=np.float64)
    x = rng.standard_normal((4, 5))
    labels = np.array([0, 2, 1, 2])

    def head(_):
        return losses.cross_entropy(layer.forward(x, "train"), labels)

    logits = layer.forward(x, "train")
    dlogits = losses.cross_entropy_grad(logits, labels)
    dx = layer.backward(dlogits)
    assert max_rel_error(dx, numerical_gradient(head, x)) < 1e-6
    assert max_rel_error(layer.weight.grad,
                         numerical_gradient(head, layer.weight.data)) < 1e-6


def _inverted_residual_case(seed):
    """An IR block conditioned for finite differences: BN shifted into the
    smooth ReLU6 region, eval mode with populated running stats."""
    spec = blocks.BlockSpec("InvertedResidual", 4, 4, stride=1, expansion=6,
                            block_id=1)
    block = blocks.InvertedResidualBlock(spec, np.random.default_rng(seed),
                                         np.float64)
    for sub, layer in block.sublayers():
        if isinstance(layer, BatchNorm2d) and sub != "project.bn":
            layer.beta.data[:] = 3.0
            layer.gamma.data[:] = 0.6
    warm = np.random.default_rng(seed + 500)
    for _ in range(3):
        block.forward(warm.standard_normal((8, 4, 6, 6)), "train")
    return block, warm


def test_inverted_residual_block_gradcheck():
    block, rng = _inverted_residual_case(seed=1)
    x = rng.standard_normal((3, 4, 6, 6))
    r = rng.standard_normal((3, 4, 6, 6))

    def head(_):
        return float((block.forward(x, "eval") * r).sum())

    block.forward(x, "eval")
    dx = block.backward(r)
    worst = max_rel_error(dx, numerical_gradient(head, x))
    for _, layer in block.sublayers():
        for _, p in layer.parameters():
            worst = max(worst,
                        max_rel_error(p.grad,
                                      numerical_gradient(head, p.data)))
    assert worst < TOL


def test_skip_connection_gradient(rng):
    """The residual path adds the upstream gradient straight through."""
    spec = blocks.BlockSpec("InvertedResidual", 3, 3, stride=1, expansion=6,
                            block_id=1)
    assert spec.has_skip
    block = blocks.InvertedResidualBlock(spec, rng, np.float64)
    x = rng.standard_normal((2, 3, 4, 4))
    y = block.forward(x, "train")
    dy = rng.standard_normal(y.shape)
    # zero out the conv path: projecting conv weight of zeros kills the chain
    block.project[0].weight.data[:] = 0.0
    block.forward(x, "train")
    dx = block.backward(dy)
    np.testing.assert_allclose(dx, dy)


def test_model_backward_is_input_gradient(rng):
    """End-to-end logits gradient through a MicroNet reaches the input with
    the right shape and finite values."""
    model = blocks.build_teacher(10, "micronet", seed=0, dtype=np.float64)
    x = rng.uniform(0.1, 0.9, (2, 3, 32, 32))
    logits = model.forward(x, mode="eval")
    dlogits = np.zeros_like(logits)
    dlogits[:, 3] = 1.0
    dx = model.backward(dlogits)
    assert dx.shape == x.shape
    assert np.isfinite(dx).all()
