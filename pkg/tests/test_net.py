import json
import math

import numpy as np
import pytest

from annlab.net import (
    Activation, NetworkParams, NumericError, TrainConfig, build_varied_depth, dumps_checkpoint,
    forward, gradient, init_network, load_checkpoint, save_checkpoint, train, validation_mask,
    varied_forward, varied_train,
)


def random_net(rng, depth=None, act=None):
    depth = depth or int(rng.integers(1, 4))
    widths = [int(w) for w in rng.integers(1, 17, size=depth)]
    act = act or ("tanh", "sigmoid")[int(rng.integers(2))]
    net = init_network(widths, act, int(rng.integers(1 << 30)))
    vec = net.to_vector() + 0.3 * rng.standard_normal(net.n_params)
    return net.with_vector(vec)


def fd_gradient(model, x, y, h=1e-5):
    theta = model.to_vector()
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        lp, _ = model.with_vector(theta + e).loss_and_grad(x, y)
        lm, _ = model.with_vector(theta - e).loss_and_grad(x, y)
        g[i] = (lp - lm) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def test_activation_identities():
    z = np.linspace(-5, 5, 101)
    for act, d in [(Activation.TANH, lambda z: 1 / np.cosh(z) ** 2),
                   (Activation.SIGMOID, lambda z: np.exp(-z) / (1 + np.exp(-z)) ** 2)]:
        np.testing.assert_allclose(act.derivative_from_output(act(z)), d(z), rtol=1e-12, atol=1e-15)
    assert Activation.SIGMOID(np.array([-1e6, 1e6])).tolist() == [0.0, 1.0]


def test_forward_single_neuron():
    net = NetworkParams([[[1.0]]], [[0.0]], [1.0], 0.0, "tanh")
    assert forward(net, 0.0).output == 0.0
    assert forward(net, 50.0).output == pytest.approx(1.0, abs=1e-15)


def test_forward_matches_direct_recursion():
    rng = np.random.default_rng(1)
    W1, b1 = rng.normal(size=(3, 1)), rng.normal(size=3)
    W2, b2 = rng.normal(size=(2, 3)), rng.normal(size=2)
    alpha, beta = rng.normal(size=2), 0.4
    net = NetworkParams([W1, W2], [b1, b2], alpha, beta, "tanh")
    x = 0.3
    h1 = [math.tanh(W1[j, 0] * x + b1[j]) for j in range(3)]
    h2 = [math.tanh(sum(W2[k, j] * h1[j] for j in range(3)) + b2[k]) for k in range(2)]
    expected = sum(a * h for a, h in zip(alpha, h2)) + beta
    tr = forward(net, x)
    assert abs(tr.output - expected) < 1e-14
    np.testing.assert_allclose(tr.hidden[0], np.tanh(tr.preacts[0]), rtol=0, atol=0)


def test_forward_rejects_non_finite():
    net = init_network([2], "tanh", 0)
    with pytest.raises(NumericError):
        forward(net, float("nan"))
    bad = net.with_vector(np.r_[net.to_vector()[:-1], np.inf])
    with pytest.raises(NumericError):
        forward(bad, 0.0)


def test_layer_shapes_must_chain():
    with pytest.raises(ValueError):
        NetworkParams([np.ones((2, 1)), np.ones((3, 3))], [np.zeros(2), np.zeros(3)], np.ones(3), 0.0)


def test_total_width():
    assert init_network([3, 4, 5], "tanh", 0).total_width == 12


def test_gradient_zero_residual():
    net = NetworkParams([[[1.3]]], [[0.0]], [0.7], 0.0, "tanh")
    g = gradient(net, [(0.0, 0.0)])
    assert np.all(g.to_vector() == 0.0)
    xs = np.linspace(-1, 1, 5)
    g = gradient(net, list(zip(xs, net.predict(xs))))
    assert np.max(np.abs(g.to_vector())) < 1e-15


def test_gradient_empty_batch():
    with pytest.raises(ValueError):
        gradient(init_network([2], "tanh", 0), [])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(5):
        net = random_net(rng)
        x = rng.uniform(-2, 2, 12)
        y = rng.normal(size=12)
        _, g = net.loss_and_grad(x, y)
        assert rel_err(g, fd_gradient(net, x, y)) < 1e-5


def test_varied_combination_gradient():
    rng = np.random.default_rng(11)
    net = build_varied_depth([1, 2], 3, "sigmoid", seed=2)
    net = net.with_vector(net.to_vector() + 0.2 * rng.standard_normal(net.n_params))
    x = rng.uniform(-1, 1, 10)
    y = np.sin(3 * x)
    _, g = net.loss_and_grad(x, y)
    fd = fd_gradient(net, x, y)
    assert rel_err(g, fd) < 1e-5
    k = net.combination.size
    assert rel_err(g[-k:], fd[-k:]) < 1e-5


def test_output_bound():
    rng = np.random.default_rng(5)
    for _ in range(100):
        net = random_net(rng)
        x = rng.uniform(-50, 50, 10)
        bound = np.sum(np.abs(net.alpha)) + abs(net.beta)
        assert np.all(np.abs(net.predict(x)) <= bound * (1 + 1e-15))


def test_saturation_matches_far_forward():
    rng = np.random.default_rng(9)
    for _ in range(20):
        net = random_net(rng)
        for sign in (-1, 1):
            assert abs(forward(net, sign * 1e6).output - net.saturation_limit(sign)) < 1e-9


def test_build_varied_depth():
    net = build_varied_depth([1, 2, 3], 16, "sigmoid", 0)
    assert [s.total_width for s in net.subnets] == [16, 32, 48]
    np.testing.assert_allclose(net.combination, [1 / 3] * 3)
    one = build_varied_depth([1], 1, "tanh", 0)
    assert one.subnets[0].total_width == 1
    with pytest.raises(ValueError, match="duplicate"):
        build_varied_depth([2, 2], 4)


def test_varied_combination_selects_subnet():
    net = build_varied_depth([1, 2, 3], 4, "sigmoid", 3)
    x = np.linspace(-2, 2, 9)
    net.combination[:] = [1, 0, 0]
    np.testing.assert_array_equal(net.predict(x), net.subnets[0].predict(x))
    net.combination[:] = 0
    assert np.all(net.predict(x) == 0)
    assert varied_forward(net, 0.5) == 0.0


def test_validation_mask_modes():
    m = validation_mask(10, 0.2, "tail")
    assert m.tolist() == [False] * 8 + [True] * 2
    m = validation_mask(100, 0.2, "interleaved")
    assert m.sum() == 20 and not m[0] and not m[-1]
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


def test_train_constant_target():
    x = np.linspace(-1, 1, 60)
    net, hist = train(init_network([4], "sigmoid", 0), x, np.full(60, 0.7),
                      TrainConfig(max_epochs=3000))
    assert hist.train_loss[hist.best_epoch] < 1e-4
    assert np.mean((net.predict(x) - 0.7) ** 2) < 1e-4


def test_train_tanh_standard_net():
    x = np.linspace(-4, 4, 200)
    net, hist = train(init_network([16, 16, 16], "sigmoid", 0), x / 4, np.tanh(x),
                      TrainConfig(max_epochs=4000))
    assert np.mean((net.predict(x / 4) - np.tanh(x)) ** 2) < 1e-3


def test_early_stopping_on_overfit():
    rng = np.random.default_rng(0)
    x = np.linspace(-1, 1, 40)
    y = rng.normal(size=40)
    _, hist = train(init_network([16, 16], "tanh", 0), x, y,
                    TrainConfig(max_epochs=5000, patience=50))
    assert hist.stopped_early
    assert hist.best_epoch < 5000 - 1
    assert len(hist.train_loss) <= 5000


def test_degenerate_inputs_warn():
    with pytest.warns(UserWarning, match="degenerate"):
        _, hist = train(init_network([2], "tanh", 0), np.zeros(10), np.ones(10),
                        TrainConfig(max_epochs=5))
    assert hist.warnings


def test_training_is_deterministic():
    x = np.linspace(-1, 1, 50)
    runs = [train(init_network([5, 5], "sigmoid", 4), x, np.sin(3 * x),
                  TrainConfig(max_epochs=300, seed=4)) for _ in range(2)]
    assert runs[0][1].train_loss == runs[1][1].train_loss
    assert np.array_equal(runs[0][0].to_vector(), runs[1][0].to_vector())


def test_minibatch_training_runs():
    x = np.linspace(-1, 1, 50)
    net, hist = train(init_network([5], "tanh", 0), x, x ** 2,
                      TrainConfig(max_epochs=50, batch_size=8, seed=1))
    assert len(hist.train_loss) == 50


def test_varied_train_reduces_loss():
    x = np.linspace(-1, 1, 80)
    net0 = build_varied_depth([1, 2], 4, "sigmoid", 0)
    net, hist = varied_train(net0, x, np.sin(2 * x), TrainConfig(max_epochs=500))
    assert hist.train_loss[hist.best_epoch] < hist.train_loss[0]


def test_checkpoint_round_trip(tmp_path):
    for model in (init_network([3, 2], "tanh", 1), build_varied_depth([1, 2], 3, "sigmoid", 1)):
        path = tmp_path / "ck.json"
        save_checkpoint(path, model, {"note": "x"})
        loaded, payload = load_checkpoint(path)
        assert np.array_equal(loaded.to_vector(), model.to_vector())
        assert payload["note"] == "x"
        assert dumps_checkpoint(loaded, {"note": "x"}) == path.read_text()
        assert json.loads(path.read_text())["format"] == "annlab-checkpoint/1"
