import struct

import numpy as np
import pytest

from prom.errors import DivergenceError, InvalidInputError
from prom.tinynet import Mlp, Optimizer, grad_check


def _mse(target):
    def loss_fn(out):
        diff = out - target
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size
    return loss_fn


@pytest.mark.parametrize("activation", ["tanh", "relu", "linear"])
def test_backward_matches_finite_differences(activation):
    rng = np.random.default_rng(0)
    net = Mlp([5, 8, 8, 3], activation=activation, rng=rng)
    x = rng.normal(size=(7, 5))
    err = grad_check(net, _mse(rng.normal(size=(7, 3))), x, fraction=1.0, rng=rng)
    assert err < 1e-4


def test_single_vector_input_is_supported():
    rng = np.random.default_rng(1)
    net = Mlp([4, 6, 2], rng=rng)
    x = rng.normal(size=4)
    assert net(x).shape == (2,)
    assert grad_check(net, _mse(np.zeros(2)), x, fraction=1.0) < 1e-4


def test_layer_views_share_the_flat_vector():
    net = Mlp([3, 4, 2], seed=0)
    assert net.n_params == 3 * 4 + 4 + 4 * 2 + 2
    net.params[:] = 0.0
    assert np.all(net.layers[0][0] == 0)
    assert np.all(net(np.ones(3)) == 0)


def test_glorot_init_and_zero_biases():
    net = Mlp([100, 50, 10], seed=3)
    w, b = net.layers[0]
    assert np.abs(w).max() <= np.sqrt(6 / 150)
    assert np.all(b == 0)
    assert np.array_equal(Mlp([100, 50, 10], seed=3).params, net.params)


def test_backward_before_forward_raises():
    with pytest.raises(RuntimeError):
        Mlp([2, 2]).backward(np.zeros((1, 2)))


def test_bad_construction_rejected():
    with pytest.raises(InvalidInputError):
        Mlp([3])
    with pytest.raises(InvalidInputError):
        Mlp([3, 4, 2], activation="softsign")
    with pytest.raises(InvalidInputError):
        Mlp([3, 2])(np.zeros(4))


def test_sgd_step():
    w = np.array([1.0])
    Optimizer("sgd", lr=0.1).step(w, np.array([2.0]))
    assert w[0] == pytest.approx(0.8)


def test_adam_first_step_moves_by_lr():
    w = np.array([1.0, -2.0])
    opt = Optimizer("adam", lr=0.01)
    opt.step(w, np.array([3.0, -0.5]))
    assert np.allclose(w, [1.0 - 0.01, -2.0 + 0.01], atol=1e-8)
    assert opt.t == 1


def test_non_finite_gradient_leaves_parameters_untouched():
    w = np.array([1.0, 2.0])
    opt = Optimizer("adam")
    with pytest.raises(DivergenceError) as info:
        opt.step(w, np.array([np.nan, 0.0]))
    assert info.value.step == 0
    assert np.array_equal(w, [1.0, 2.0])


def test_optimizer_validation():
    with pytest.raises(InvalidInputError):
        Optimizer("rmsprop")
    with pytest.raises(InvalidInputError):
        Optimizer("sgd", lr=0.0)


def test_training_reduces_loss():
    rng = np.random.default_rng(4)
    net = Mlp([3, 16, 1], rng=rng)
    x = rng.normal(size=(64, 3))
    y = np.sin(x.sum(axis=1, keepdims=True))
    opt = Optimizer("adam", lr=1e-2)
    first = None
    for _ in range(300):
        loss, g = _mse(y)(net(x))
        first = loss if first is None else first
        opt.step(net.params, net.backward(g))
    assert loss < 0.1 * first


def test_checkpoint_layout_and_round_trip(tmp_path):
    net = Mlp([3, 5, 2], seed=1)
    path = tmp_path / "net.bin"
    net.save(path)
    data = path.read_bytes()
    assert struct.unpack_from("<4I", data) == (3, 3, 5, 2)
    assert len(data) == 16 + 8 * net.n_params
    assert np.array_equal(np.frombuffer(data, "<f8", offset=16), net.params)
    back = Mlp.load(path)
    assert back.widths == [3, 5, 2]
    assert np.array_equal(back.params, net.params)
