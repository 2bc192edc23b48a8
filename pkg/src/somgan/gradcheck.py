"""Finite-difference checks of every hand-written gradient in the package.

Each check builds a small random instance and returns the worst relative
error between the analytic gradient and central differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import OUTLIER, Standardizer
from .membership import SigmoidLayer, loss_and_grads
from .nn import (BatchNorm, Dense, LeakyReLU, Sequential, WNDense, check_layer, numerical_grad,
                 relative_error, softmax_cross_entropy)
from .ssgan import (SSGAN, Discriminator, Generator, TrainConfig, discriminator_step_grads,
                    generator_step_grads, loss_generator_fm, loss_supervised, loss_unsupervised_D)

LAYER_TOL = 1e-4
COMPOSITE_TOL = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


class _Memberships:
    """Smooth fixed map to memberships, standing in for a trained SOM."""

    size = 4

    def __init__(self, bands, rng):
        self.P = rng.normal(size=(bands, self.size))

    def __call__(self, X):
        return 1.0 / (1.0 + np.exp(-np.atleast_2d(X) @ self.P))


def _params_error(f, params):
    """``params`` is a list of (array, analytic gradient) pairs."""
    return max(relative_error(g, numerical_grad(f, a)) for a, g in params)


def _clear_of_kink(layer: WNDense, x, margin=0.05):
    # shift biases so no hidden pre-activation sits within a finite-difference step of zero
    h = layer.forward(x)
    layer.params["b"] = layer.params["b"] + np.where(np.abs(h).min(axis=0) < margin, 2 * margin, 0.0)


def check_dense(rng):
    return check_layer(Dense(6, 4, rng, 0.5), rng.normal(size=(5, 6)))


def check_wn_dense(rng):
    layer = WNDense(6, 4, rng, 0.5)
    layer.params["g"] = rng.uniform(0.5, 2.0, 4)
    return check_layer(layer, rng.normal(size=(5, 6)))


def check_batchnorm_train(rng):
    bn = BatchNorm(4)
    bn.params["gamma"] = rng.uniform(0.5, 2.0, 4)
    return check_layer(bn, rng.normal(size=(10, 4)), train=True)


def check_batchnorm_eval(rng):
    bn = BatchNorm(4)
    bn.running_mean, bn.running_var = rng.normal(size=4), rng.uniform(0.5, 2.0, 4)
    return check_layer(bn, rng.normal(size=(10, 4)), train=False)


def check_leaky_relu(rng):
    x = rng.normal(size=(5, 7))
    x = np.where(np.abs(x) < 0.1, 0.1 * np.sign(x + 1e-12), x)
    return check_layer(LeakyReLU(0.2), x)


def check_two_layer(rng):
    net = Sequential(WNDense(5, 8, rng, 0.5), LeakyReLU(0.2), WNDense(8, 3, rng, 0.5))
    x = rng.normal(size=(6, 5))
    _clear_of_kink(net.layers[0], x)
    return check_layer(net, x)


def check_softmax_ce(rng):
    z, t = rng.normal(size=(5, 4)), rng.integers(4, size=5)
    _, g = softmax_cross_entropy(z, t)
    return _params_error(lambda: softmax_cross_entropy(z, t)[0], [(z, g)])


def check_generator(rng):
    g = Generator(6, 4, (8, 7), rng, init_std=0.5)
    for layer in g.net.layers:
        if isinstance(layer, BatchNorm):
            layer.params["gamma"] = rng.uniform(0.5, 1.5, layer.n)
    # biases in front of batchnorm have exactly zero gradient; h=1e-4 keeps their round-off small
    return check_layer(g.net, rng.random((9, 6)), h=1e-4, train=True)


def check_discriminator(rng):
    d = Discriminator(5, 2, 4, (7, 6), (5, 4), rng, init_std=0.5)
    x, s = rng.normal(size=(4, 5)), rng.random((4, 4))
    R = rng.normal(size=(4, 3))
    d.forward(x, s)
    dx = d.backward(R)
    params = [(x, dx)] + [(layer.params[k], layer.grads[k].copy()) for _, layer, k in d.named_params()]
    return _params_error(lambda: float((d.forward(x, s)[0] * R).sum()), params)


def check_sigmoid_objective(rng):
    alpha, beta = rng.uniform(0.5, 2.0, 6), rng.uniform(1.0, 4.0, 6)
    D = rng.uniform(0.0, 6.0, (15, 6))
    T = rng.choice([0.0, 0.25, 0.5, 1.0], size=(15, 6))
    _, ga, gb = loss_and_grads(SigmoidLayer(alpha, beta), D, T)
    return _params_error(lambda: loss_and_grads(SigmoidLayer(alpha, beta), D, T)[0], [(alpha, ga), (beta, gb)])


def check_loss_supervised(rng):
    z = rng.normal(size=(6, 4))
    y = np.array([0, 2, OUTLIER, 1, OUTLIER, 0])
    _, g = loss_supervised(z, y)
    return _params_error(lambda: loss_supervised(z, y)[0], [(z, g)])


def check_loss_unsupervised(rng):
    zr, zf = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    _, gr, gf = loss_unsupervised_D(zr, zf)
    return _params_error(lambda: loss_unsupervised_D(zr, zf)[0], [(zr, gr), (zf, gf)])


def check_loss_feature_matching(rng):
    fr, ff = rng.normal(size=(5, 4)), rng.normal(size=(3, 4))
    _, g = loss_generator_fm(fr, ff)
    return _params_error(lambda: loss_generator_fm(fr, ff)[0], [(ff, g)])


def _small_model(rng, features):
    cfg = TrainConfig(features=features, spec_widths=(7, 6), som_widths=(5, 4), gen_hidden=(8, 8),
                      noise_dim=3, init_std=0.5, seed=int(rng.integers(1 << 30)))
    fmap = _Memberships(5, rng) if features == "spectra+som" else None
    return SSGAN(cfg, 5, 2, Standardizer.identity(5), fmap), fmap


def check_discriminator_loss(rng):
    """Supervised plus unsupervised discriminator loss through both paths."""
    model, fmap = _small_model(rng, "spectra+som")
    xl, xu, xf = rng.normal(size=(5, 5)), rng.normal(size=(6, 5)), rng.normal(size=(4, 5))
    lab = (xl, fmap(xl), np.array([0, 1, OUTLIER, 1, 0]))
    unl, fake = (xu, fmap(xu)), (xf, fmap(xf))
    discriminator_step_grads(model, lab, unl, fake)
    params = [(layer.params[k], layer.grads[k].copy()) for _, layer, k in model.disc.named_params()]
    return _params_error(lambda: sum(discriminator_step_grads(model, lab, unl, fake)), params)


def check_generator_loss(rng):
    """Feature-matching loss back through the discriminator into the generator."""
    model, _ = _small_model(rng, "spectra")
    real, z = (rng.normal(size=(6, 5)), None), rng.random((4, 3))
    generator_step_grads(model, real, z)
    params = [(layer.params[k], layer.grads[k].copy()) for _, layer, k in model.gen.net.named_params()]
    return _params_error(lambda: generator_step_grads(model, real, z), params)


CHECKS = (
    ("dense", check_dense, LAYER_TOL),
    ("wn_dense", check_wn_dense, LAYER_TOL),
    ("batchnorm_train", check_batchnorm_train, LAYER_TOL),
    ("batchnorm_eval", check_batchnorm_eval, LAYER_TOL),
    ("leaky_relu", check_leaky_relu, LAYER_TOL),
    ("two_layer_wn_leaky", check_two_layer, LAYER_TOL),
    ("softmax_cross_entropy", check_softmax_ce, LAYER_TOL),
    ("generator", check_generator, LAYER_TOL),
    ("discriminator", check_discriminator, LAYER_TOL),
    ("sigmoid_objective", check_sigmoid_objective, LAYER_TOL),
    ("loss_supervised", check_loss_supervised, LAYER_TOL),
    ("loss_unsupervised", check_loss_unsupervised, LAYER_TOL),
    ("loss_feature_matching", check_loss_feature_matching, LAYER_TOL),
    ("discriminator_loss", check_discriminator_loss, COMPOSITE_TOL),
    ("generator_loss", check_generator_loss, COMPOSITE_TOL),
)


def run_suite(seed: int = 0) -> list[CheckResult]:
    """Run every check with its own seeded generator."""
    seqs = np.random.SeedSequence(seed).spawn(len(CHECKS))
    return [CheckResult(name, float(fn(np.random.default_rng(s))), tol)
            for (name, fn, tol), s in zip(CHECKS, seqs)]
