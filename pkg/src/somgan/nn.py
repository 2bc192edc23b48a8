"""Small hand-differentiated MLP toolkit: layers, losses, Adam and gradient checking.

Every layer caches what it needs in ``forward`` and returns the input gradient
from ``backward``; parameter gradients land in ``layer.grads`` under the same
keys as ``layer.params``.
"""
from __future__ import annotations

import json
import os

import numpy as np

from .core import save_npz

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    pass


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


def _check_input(x, width, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{name}: expected (n, {width}) input, got {x.shape}")
    return x


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None, init_std=0.05):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.n_in, self.n_out = n_in, n_out
        self.params = {"W": rng.normal(0.0, init_std, (n_in, n_out)), "b": np.zeros(n_out)}
        self.zero_grad()

    def forward(self, x, train=True):
        self._x = _check_input(x, self.n_in, "Dense")
        return self._x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        self.grads["W"] = self._x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["W"].T


class WNDense(Layer):
    """Weight-normalized dense layer: column k of the weight is ``g_k v_k / ||v_k||``."""

    def __init__(self, n_in, n_out, rng=None, init_std=0.05):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.n_in, self.n_out = n_in, n_out
        V = rng.normal(0.0, init_std, (n_in, n_out))
        self.params = {"V": V, "g": np.linalg.norm(V, axis=0), "b": np.zeros(n_out)}
        self.zero_grad()

    def weight(self):
        V, g = self.params["V"], self.params["g"]
        norm = np.linalg.norm(V, axis=0)
        if np.any(norm == 0):
            raise ArithmeticError("weight-norm direction with zero length")
        return V * (g / norm)

    def data_init(self, x, eps=1e-8):
        """Set g and b so the pre-activations of ``x`` have zero mean and unit variance."""
        x = _check_input(x, self.n_in, "WNDense")
        V = self.params["V"]
        t = x @ (V / np.linalg.norm(V, axis=0))
        m, s = t.mean(axis=0), t.std(axis=0) + eps
        self.params["g"] = 1.0 / s
        self.params["b"] = -m / s
        return self.forward(x)

    def forward(self, x, train=True):
        self._x = _check_input(x, self.n_in, "WNDense")
        return self._x @ self.weight() + self.params["b"]

    def backward(self, dy):
        V, g = self.params["V"], self.params["g"]
        norm = np.linalg.norm(V, axis=0)
        vhat = V / norm
        dW = self._x.T @ dy
        proj = (dW * vhat).sum(axis=0)
        self.grads["g"] = proj
        self.grads["V"] = (g / norm) * (dW - vhat * proj)
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.weight().T


class BatchNorm(Layer):
    def __init__(self, n, momentum=0.9, eps=1e-5):
        super().__init__()
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.n, self.momentum, self.eps = n, momentum, eps
        self.params = {"gamma": np.ones(n), "delta": np.zeros(n)}
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.zero_grad()

    def forward(self, x, train=True):
        x = _check_input(x, self.n, "BatchNorm")
        if train:
            mu, var = x.mean(axis=0), x.var(axis=0)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mu
            self.running_var = m * self.running_var + (1 - m) * var
        else:
            mu, var = self.running_mean, self.running_var
        self._train = train
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv
        return self.params["gamma"] * self._xhat + self.params["delta"]

    def backward(self, dy):
        xhat, inv = self._xhat, self._inv
        self.grads["gamma"] = (dy * xhat).sum(axis=0)
        self.grads["delta"] = dy.sum(axis=0)
        dxhat = dy * self.params["gamma"]
        if not self._train:
            return dxhat * inv
        n = dy.shape[0]
        return inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


class LeakyReLU(Layer):
    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=np.float64)
        self._pos = x > 0
        return np.where(self._pos, x, self.slope * x)

    def backward(self, dy):
        return np.where(self._pos, dy, self.slope * dy)


class Sequential(Layer):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def data_init(self, x):
        for layer in self.layers:
            x = layer.data_init(x) if isinstance(layer, WNDense) else layer.forward(x, True)
        return x

    def named_params(self, prefix=""):
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                yield f"{prefix}{i}.{k}", layer, k


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))


def softmax_cross_entropy(logits, targets):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    ``targets`` is a vector of class indices or an ``(n, C)`` array of
    target distributions.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n, C = logits.shape
    targets = np.asarray(targets)
    if targets.ndim == 1:
        P = np.zeros((n, C))
        P[np.arange(n), targets.astype(np.int64)] = 1.0
    else:
        P = targets.astype(np.float64)
    lp = log_softmax(logits)
    loss = -(P * lp).sum() / n
    grad = (np.exp(lp) * P.sum(axis=1, keepdims=True) - P) / n
    return float(loss), grad


def sample_uniform_noise(rng, n, dim):
    if dim <= 0:
        raise ValueError("noise dimension must be positive")
    return np.random.default_rng(rng).random((n, dim))


class Adam:
    def __init__(self, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.step_count = 0

    def step(self, items):
        """Update ``(key, params_dict, name, grad)`` entries in place."""
        items = list(items)
        for key, _, _, g in items:
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for {key}")
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for key, params, name, g in items:
            m = self.m.get(key)
            if m is None:
                m = self.m[key] = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
            v = self.v[key]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[name] = params[name] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def step_model(self, model: Sequential, prefix=""):
        self.step((key, layer.params, k, layer.grads[k]) for key, layer, k in model.named_params(prefix))


def adam_step(params: dict, grads: dict, state: Adam) -> dict:
    """Functional wrapper: returns the updated ``params`` dict (modified in place)."""
    for k in params:
        if np.shape(params[k]) != np.shape(grads[k]):
            raise ShapeError(f"gradient shape mismatch for {k}")
    state.step((k, params, k, np.asarray(grads[k], dtype=np.float64)) for k in params)
    return params


def relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor), elementwise; the floor guards near-zero entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)).max())


def numerical_grad(f, x, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. array ``x``, perturbed in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def grad_check(f, arrays: dict, analytic: dict, h=1e-5) -> float:
    """Largest relative error between ``analytic`` gradients and central differences.

    ``f`` must recompute the scalar loss from the current contents of
    ``arrays`` (which are perturbed in place and restored).
    """
    worst = 0.0
    for k, arr in arrays.items():
        worst = max(worst, relative_error(analytic[k], numerical_grad(f, arr, h)))
    return worst


def check_layer(layer: Layer, x, h=1e-5, train=True, rng=0) -> float:
    """Gradient-check a layer (or stack) through a random linear read-out of its output."""
    x = np.array(x, dtype=np.float64)
    y = layer.forward(x, train)
    R = np.random.default_rng(rng).normal(size=y.shape)
    dx = layer.backward(R)
    pairs = [(layer, k) for k in layer.params]
    if isinstance(layer, Sequential):
        pairs = [(sub, k) for _, sub, k in layer.named_params()]
    arrays = {"x": x}
    analytic = {"x": dx}
    for i, (sub, k) in enumerate(pairs):
        arrays[f"{i}.{k}"] = sub.params[k]
        analytic[f"{i}.{k}"] = sub.grads[k].copy()

    def loss():
        return float((layer.forward(x, train) * R).sum())

    return grad_check(loss, arrays, analytic, h)


def save_checkpoint(path_prefix: str | os.PathLike, arrays: dict, meta: dict | None = None) -> None:
    """Write ``<prefix>.npz`` (named arrays) and ``<prefix>.json`` (shape manifest + meta)."""
    path_prefix = os.fspath(path_prefix)
    arrays = {k: np.asarray(v) for k, v in arrays.items()}
    save_npz(path_prefix + ".npz", arrays)
    manifest = {
        "format": "somgan-checkpoint",
        "version": CHECKPOINT_VERSION,
        "arrays": {k: {"shape": list(v.shape), "dtype": str(v.dtype)} for k, v in sorted(arrays.items())},
        "meta": meta or {},
    }
    with open(path_prefix + ".json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_checkpoint(path_prefix: str | os.PathLike):
    path_prefix = os.fspath(path_prefix)
    with open(path_prefix + ".json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "somgan-checkpoint" or manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path_prefix}: unsupported checkpoint format")
    with np.load(path_prefix + ".npz") as z:
        arrays = {k: z[k] for k in z.files}
    for k, spec in manifest["arrays"].items():
        if list(arrays[k].shape) != spec["shape"]:
            raise ShapeError(f"{path_prefix}: shape mismatch for {k}")
    return arrays, manifest["meta"]
