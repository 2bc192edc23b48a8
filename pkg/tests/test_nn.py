import numpy as np
import pytest

from somgan.nn import (Adam, BatchNorm, Dense, DivergenceError, LeakyReLU, Sequential, ShapeError,
                       WNDense, adam_step, check_layer, load_checkpoint, numerical_grad,
                       relative_error, sample_uniform_noise, save_checkpoint, softmax,
                       softmax_cross_entropy)


def away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def test_wn_with_unit_scale_is_dense():
    rng = np.random.default_rng(0)
    wn = WNDense(5, 3, rng)
    wn.params["g"] = np.linalg.norm(wn.params["V"], axis=0)
    wn.params["b"] = rng.normal(size=3)
    d = Dense(5, 3)
    d.params = {"W": wn.params["V"].copy(), "b": wn.params["b"].copy()}
    x = rng.normal(size=(4, 5))
    assert np.abs(wn.forward(x) - d.forward(x)).max() <= 1e-12


def test_leaky_relu_values():
    act = LeakyReLU(0.2)
    np.testing.assert_array_equal(act.forward(np.array([[-1.0, 1.0]])), [[-0.2, 1.0]])


def test_batchnorm_train_normalizes():
    rng = np.random.default_rng(1)
    bn = BatchNorm(4)
    bn.params["gamma"] = rng.uniform(0.5, 2, 4)
    bn.params["delta"] = rng.normal(size=4)
    bn.forward(rng.normal(3.0, 5.0, (64, 4)), train=True)
    xhat = bn._xhat
    assert np.abs(xhat.mean(axis=0)).max() < 1e-8
    # the eps inside the square root shifts the variance by eps/var
    assert np.abs(xhat.var(axis=0) - 1).max() < 1e-6


def test_batchnorm_eval_has_no_batch_coupling():
    rng = np.random.default_rng(2)
    bn = BatchNorm(3)
    for _ in range(5):
        bn.forward(rng.normal(size=(16, 3)), train=True)
    x = rng.normal(size=(8, 3))
    np.testing.assert_array_equal(bn.forward(x, train=False)[2], bn.forward(x[2:3], train=False)[0])


def test_dense_grad():
    rng = np.random.default_rng(3)
    assert check_layer(Dense(6, 4, rng, init_std=0.5), rng.normal(size=(5, 6))) < 1e-4


def test_wn_dense_grad():
    rng = np.random.default_rng(4)
    layer = WNDense(6, 4, rng, init_std=0.5)
    layer.params["g"] = rng.uniform(0.5, 2.0, 4)
    assert check_layer(layer, rng.normal(size=(5, 6))) < 1e-4


def test_batchnorm_grads():
    rng = np.random.default_rng(5)
    bn = BatchNorm(4)
    bn.params["gamma"] = rng.uniform(0.5, 2, 4)
    x = rng.normal(size=(10, 4))
    assert check_layer(bn, x, train=True) < 1e-4
    assert check_layer(bn, x, train=False) < 1e-4


def test_leaky_relu_grad():
    rng = np.random.default_rng(6)
    assert check_layer(LeakyReLU(0.2), away_from_zero(rng, (5, 7))) < 1e-4


def test_two_layer_composite_grad():
    rng = np.random.default_rng(7)
    net = Sequential(WNDense(5, 8, rng, 0.5), LeakyReLU(0.2), WNDense(8, 3, rng, 0.5))
    x = rng.normal(size=(6, 5))
    h = net.layers[0].forward(x)
    # keep every hidden pre-activation clear of the kink
    net.layers[0].params["b"] = net.layers[0].params["b"] + np.where(np.abs(h).min(axis=0) < 0.05, 0.1, 0.0)
    assert np.abs(net.layers[0].forward(x)).min() > 1e-3
    assert check_layer(net, x) < 1e-4


def test_shape_errors():
    with pytest.raises(ShapeError):
        Dense(3, 2).forward(np.ones((4, 5)))


def test_cross_entropy_uniform():
    for C in (2, 3, 7):
        loss, _ = softmax_cross_entropy(np.zeros((4, C)), np.zeros(4, dtype=int))
        assert loss == pytest.approx(np.log(C), abs=1e-15)


def test_cross_entropy_confident():
    logits = np.array([[1000.0, 0.0, 0.0]])
    loss, g = softmax_cross_entropy(logits, [0])
    assert loss == 0.0 and np.all(np.isfinite(g))


def test_cross_entropy_grad():
    rng = np.random.default_rng(8)
    z = rng.normal(size=(5, 4))
    t = rng.integers(4, size=5)
    _, g = softmax_cross_entropy(z, t)
    assert relative_error(g, numerical_grad(lambda: softmax_cross_entropy(z, t)[0], z)) < 1e-4


def test_cross_entropy_soft_targets():
    rng = np.random.default_rng(9)
    z = rng.normal(size=(3, 4))
    P = softmax(rng.normal(size=(3, 4)))
    _, g = softmax_cross_entropy(z, P)
    assert relative_error(g, numerical_grad(lambda: softmax_cross_entropy(z, P)[0], z)) < 1e-4


def test_noise_range_and_seed():
    a = sample_uniform_noise(5, 100, 3)
    assert a.min() >= 0 and a.max() < 1
    np.testing.assert_array_equal(a, sample_uniform_noise(5, 100, 3))


def test_noise_mean():
    assert abs(sample_uniform_noise(0, 100_000, 1).mean() - 0.5) < 0.01


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, Adam(lr=0.1))
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_size():
    p = {"w": np.array([0.0, 0.0])}
    adam_step(p, {"w": np.array([3.0, -0.2])}, Adam(lr=0.01))
    np.testing.assert_allclose(p["w"], [-0.01, 0.01], rtol=1e-6)


def test_adam_quadratic_bowl():
    p = {"x": np.array([1.0, -0.7, 0.3])}
    opt = Adam(lr=0.05, beta1=0.9, beta2=0.999)
    for _ in range(500):
        adam_step(p, {"x": 2 * p["x"]}, opt)
    assert np.abs(p["x"]).max() < 1e-3


def test_adam_rejects_nan():
    with pytest.raises(DivergenceError):
        adam_step({"w": np.zeros(1)}, {"w": np.array([np.nan])}, Adam())


def test_relative_error_floor():
    assert relative_error([0.0], [1e-9]) == pytest.approx(1e-3)


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.ones(4)}
    save_checkpoint(tmp_path / "m", arrays, {"k": 1})
    back, meta = load_checkpoint(tmp_path / "m")
    np.testing.assert_array_equal(back["a"], arrays["a"])
    assert meta == {"k": 1}
