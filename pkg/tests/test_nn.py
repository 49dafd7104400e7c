import numpy as np
import pytest

from fmec.nn import (Adam, DenseNet, RMSProp, grad, optimizer_from_dict, soft_update,
                     step_adam, step_rmsprop)

import oracles


def small_net(output="linear", seed=0, sizes=(4, 7, 5, 3)):
    return DenseNet.init(list(sizes), np.random.default_rng(seed), output=output,
                         final_scale=0.5)


def test_zero_net_outputs_zero():
    net = DenseNet([np.zeros((3, 2))], [np.zeros(2)])
    assert np.array_equal(net(np.array([1.0, 2.0, 3.0])), np.zeros(2))


def test_identity_layer():
    net = DenseNet([np.eye(3)], [np.zeros(3)])
    x = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(net(x), x)


def test_golden_forward():
    net = DenseNet.init([3, 5, 4, 2], np.random.default_rng(123), output="sigmoid",
                        final_scale=0.5)
    y = net(np.array([0.1, -0.2, 0.3]))
    np.testing.assert_allclose(y, [0.35496234, 0.45403992], rtol=1e-7)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        small_net()(np.zeros(5))
    with pytest.raises(ValueError):
        DenseNet([np.zeros((3, 2)), np.zeros((3, 1))], [np.zeros(2), np.zeros(1)])


def test_linear_net_gradient_closed_form():
    W = np.array([[1.0, 2.0], [3.0, -1.0]])
    net = DenseNet([W], [np.array([0.5, 0.0])])
    x = np.array([2.0, 1.0])
    # L = sum(y) -> dL/dW = outer(x, 1), dL/db = 1, dL/dx = W @ 1
    val, pg, gx = grad(net, x, lambda y: (float(y.sum()), np.ones_like(y)))
    assert val == pytest.approx(x @ W.sum(axis=1) + 0.5)
    np.testing.assert_allclose(pg[0], np.outer(x, [1, 1]))
    np.testing.assert_allclose(pg[1], [1, 1])
    np.testing.assert_allclose(gx, W.sum(axis=1))


def test_constant_net_zero_input_gradient():
    net = DenseNet([np.zeros((3, 4)), np.zeros((4, 1))], [np.ones(4), np.array([2.0])])
    _, _, gx = grad(net, np.array([1.0, 2.0, 3.0]), lambda y: (float(y[0]), np.ones(1)))
    assert np.array_equal(gx, np.zeros(3))


@pytest.mark.parametrize("output", ["linear", "sigmoid", "tanh"])
def test_finite_differences(output):
    net = small_net(output, seed=4)
    rng = np.random.default_rng(9)
    x = rng.normal(size=(6, 4))
    c = rng.normal(size=(6, 3))

    def loss():
        return float(np.sum(c * net(x)))

    _, cache = net.forward_cache(x)
    pg, gx = net.backward(cache, c)
    for p, g in zip(net.params(), pg):
        fd = oracles.central_diff(loss, p)
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)
    np.testing.assert_allclose(gx, oracles.central_diff(loss, x), rtol=1e-4, atol=1e-8)


def test_adam_first_step():
    w = np.array([0.0])
    Adam(lr=0.001).step([w], [np.array([1.0])])
    assert w[0] == pytest.approx(-0.001, rel=1e-6)


@pytest.mark.parametrize("opt", [Adam(), RMSProp()])
def test_zero_gradient_no_change(opt):
    net = small_net()
    before = [p.copy() for p in net.params()]
    opt.step(net.params(), [np.zeros_like(p) for p in net.params()])
    for a, b in zip(before, net.params()):
        assert np.array_equal(a, b)


@pytest.mark.parametrize("make", [Adam, RMSProp])
def test_steps_move_against_gradient(make):
    w = np.array([1.0])
    opt = make(lr=0.01)
    seen = [w[0]]
    for _ in range(2):
        opt.step([w], [np.array([1.0])])
        seen.append(w[0])
    assert seen[0] > seen[1] > seen[2]


def test_step_helpers_return_net():
    net = small_net()
    g = [np.ones_like(p) for p in net.params()]
    assert step_adam(net, g, Adam()) is net
    assert step_rmsprop(net, g, RMSProp()) is net


def test_soft_update():
    t = DenseNet([np.zeros((1, 1))], [np.zeros(1)])
    o = DenseNet([np.ones((1, 1))], [np.ones(1)])
    soft_update(t, o, 0.001)
    assert t.weights[0][0, 0] == pytest.approx(0.001)
    soft_update(t, o, 0.0)
    assert t.weights[0][0, 0] == pytest.approx(0.001)
    soft_update(t, o, 1.0)
    assert t.weights[0][0, 0] == 1.0


def test_soft_update_contraction():
    t, o = small_net(seed=1), small_net(seed=2)
    dist = lambda a, b: np.sqrt(sum(np.sum((x - y) ** 2) for x, y in zip(a.params(), b.params())))
    before = dist(t, o)
    soft_update(t, o, 0.3)
    assert dist(t, o) == pytest.approx(0.7 * before, rel=1e-12)


def test_deterministic_training():
    def run():
        net = DenseNet.init([4, 8, 1], np.random.default_rng(5))
        opt = Adam()
        x = np.random.default_rng(6).normal(size=(10, 4))
        for _ in range(5):
            y, cache = net.forward_cache(x)
            pg, _ = net.backward(cache, 2 * y / len(x))
            opt.step(net.params(), pg)
        return net.params()

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)


def test_checkpoint_roundtrip():
    net = small_net("sigmoid", seed=3)
    clone = DenseNet.from_dict(net.to_dict())
    x = np.linspace(-1, 1, 4)
    assert np.array_equal(net(x), clone(x))
    with pytest.raises(ValueError):
        DenseNet.from_dict({**net.to_dict(), "version": 99})


def test_optimizer_roundtrip():
    net = small_net()
    opt = Adam()
    opt.step(net.params(), [np.ones_like(p) for p in net.params()])
    back = optimizer_from_dict(opt.to_dict())
    assert back.t == 1 and all(np.array_equal(a, b) for a, b in zip(back.m, opt.m))
