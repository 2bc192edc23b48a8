"""Semi-supervised GAN with a dual-path (spectra + SOM membership) discriminator.

The discriminator has K+1 outputs; index K (0-based) is the "not one of the
classes of interest" output that absorbs generated samples and labeled
outliers. The generator is trained by feature matching on the discriminator's
post-concatenation layer.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import OUTLIER, UNLABELED, Standardizer
from .nn import (Adam, BatchNorm, Dense, DivergenceError, LeakyReLU, Sequential, WNDense,
                 load_checkpoint, log_softmax, sample_uniform_noise, save_checkpoint)

LOG_FLOOR = math.log(1e-12)

MODEL_TYPES = {
    "sup-spectra": ("supervised", "spectra"),
    "sup-spectra-som": ("supervised", "spectra+som"),
    "semi-spectra": ("semi-supervised", "spectra"),
    "semi-spectra-som": ("semi-supervised", "spectra+som"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "semi-supervised"
    features: str = "spectra+som"
    epochs: int = 20
    steps_per_epoch: int | None = None
    batch_size: int = 64
    noise_dim: int = 50
    gen_hidden: tuple = (256, 256)
    spec_widths: tuple = (256, 128)
    som_widths: tuple = (256, 128)
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    slope: float = 0.2
    init_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("supervised", "semi-supervised"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.features not in ("spectra", "spectra+som"):
            raise ConfigError(f"unknown features {self.features!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.noise_dim < 1:
            raise ConfigError("epochs, batch_size and noise_dim must be positive")
        if len(self.gen_hidden) != 2:
            raise ConfigError("the generator has exactly two hidden layers")
        for k in ("gen_hidden", "spec_widths", "som_widths"):
            object.__setattr__(self, k, tuple(int(v) for v in getattr(self, k)))

    @classmethod
    def for_model_type(cls, name: str, **kw) -> "TrainConfig":
        try:
            mode, features = MODEL_TYPES[name]
        except KeyError:
            raise ConfigError(f"unknown model type {name!r}; expected one of {sorted(MODEL_TYPES)}") from None
        return cls(mode=mode, features=features, **kw)

    @property
    def uses_som(self) -> bool:
        return self.features == "spectra+som"

    @property
    def semi(self) -> bool:
        return self.mode == "semi-supervised"

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("gen_hidden", "spec_widths", "som_widths"):
            d[k] = list(d[k])
        return d


def _mlp(widths, n_in, rng, slope, init_std):
    layers = []
    for w in widths:
        layers += [WNDense(n_in, w, rng, init_std), LeakyReLU(slope)]
        n_in = w
    return Sequential(*layers), n_in


class Generator:
    """[dense -> batchnorm -> leaky ReLU] x 2 -> weight-normalized dense to B bands."""

    def __init__(self, noise_dim, bands, hidden=(256, 256), rng=None, slope=0.2, init_std=0.05):
        rng = np.random.default_rng(rng)
        h1, h2 = hidden
        self.noise_dim, self.bands = noise_dim, bands
        self.net = Sequential(
            Dense(noise_dim, h1, rng, init_std), BatchNorm(h1), LeakyReLU(slope),
            Dense(h1, h2, rng, init_std), BatchNorm(h2), LeakyReLU(slope),
            WNDense(h2, bands, rng, init_std),
        )

    def forward(self, z, train=True):
        return self.net.forward(z, train)

    def backward(self, dy):
        return self.net.backward(dy)

    def data_init(self, z):
        return self.net.data_init(z)


class Discriminator:
    """Spectral path and optional SOM path, concatenated, then a K+1-way read-out."""

    def __init__(self, bands, n_classes, som_size=None, spec_widths=(256, 128), som_widths=(256, 128),
                 rng=None, slope=0.2, init_std=0.05):
        rng = np.random.default_rng(rng)
        self.bands, self.n_classes, self.som_size = bands, n_classes, som_size
        self.spec, f_spec = _mlp(spec_widths, bands, rng, slope, init_std)
        self.som = None
        f_som = 0
        if som_size:
            self.som, f_som = _mlp(som_widths, som_size, rng, slope, init_std)
        self.f_spec, self.feature_width = f_spec, f_spec + f_som
        self.head = WNDense(self.feature_width, n_classes + 1, rng, init_std)

    def _check(self, som):
        if self.som is None and som is not None:
            raise ConfigError("spectra-only discriminator was given SOM features")
        if self.som is not None and som is None:
            raise ConfigError("spectra+SOM discriminator needs SOM features")

    def features(self, x, som=None, train=True):
        self._check(som)
        f = self.spec.forward(x, train)
        if self.som is not None:
            f = np.concatenate([f, self.som.forward(som, train)], axis=1)
        return f

    def forward(self, x, som=None, train=True):
        """Returns ``(logits, f)`` with ``f`` the layer feeding the logits."""
        f = self.features(x, som, train)
        return self.head.forward(f), f

    def backward(self, dlogits=None, df=None):
        """Accumulate parameter gradients; returns the gradient w.r.t. the spectral input."""
        if dlogits is None and df is None:
            raise ValueError("nothing to backpropagate")
        if dlogits is not None:
            g = self.head.backward(dlogits)
        else:
            self.head.zero_grad()
            g = np.zeros((df.shape[0], self.feature_width))
        if df is not None:
            g = g + df
        dx = self.spec.backward(g[:, :self.f_spec])
        if self.som is not None:
            self.som.backward(g[:, self.f_spec:])
        return dx

    def data_init(self, x, som=None):
        self._check(som)
        f = self.spec.data_init(x)
        if self.som is not None:
            f = np.concatenate([f, self.som.data_init(som)], axis=1)
        return self.head.data_init(f)

    def named_params(self):
        yield from self.spec.named_params("spec.")
        if self.som is not None:
            yield from self.som.named_params("som.")
        for k in self.head.params:
            yield f"head.{k}", self.head, k


def _lse(z):
    m = z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]


def loss_supervised(logits, labels):
    """Cross-entropy of labeled samples; returns ``(loss, dlogits)``.

    Inliers are scored by the softmax over the first K logits only; labeled
    outliers by the full K+1 softmax against index K. Averaged over the batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, C = logits.shape
    K = C - 1
    if np.any(labels == UNLABELED) or np.any((labels < 0) & (labels != OUTLIER)) or np.any(labels >= K):
        raise ValueError("supervised loss takes inlier class indices or OUTLIER only")
    loss = 0.0
    grad = np.zeros_like(logits)
    inl = labels >= 0
    if np.any(inl):
        lp = log_softmax(logits[inl, :K])
        rows = np.flatnonzero(inl)
        loss -= lp[np.arange(rows.size), labels[inl]].sum()
        g = np.exp(lp)
        g[np.arange(rows.size), labels[inl]] -= 1.0
        grad[rows, :K] = g
    out = ~inl
    if np.any(out):
        lp = log_softmax(logits[out])
        loss -= lp[:, K].sum()
        g = np.exp(lp)
        g[:, K] -= 1.0
        grad[out] = g
    return loss / n, grad / n


def loss_unsupervised_D(logits_real, logits_fake):
    """-mean log(1 - p_K(real)) - mean log p_K(fake), logs floored at log(1e-12).

    Returns ``(loss, dlogits_real, dlogits_fake)``.
    """
    zr = np.asarray(logits_real, dtype=np.float64)
    zf = np.asarray(logits_fake, dtype=np.float64)
    K = zr.shape[1] - 1

    lse_r = _lse(zr)
    log_not_fake = _lse(zr[:, :K]) - lse_r
    keep_r = log_not_fake > LOG_FLOOR
    loss_r = -np.maximum(log_not_fake, LOG_FLOOR).mean()
    pr = np.exp(zr - lse_r[:, None])
    pk_r = np.exp(zr[:, :K] - _lse(zr[:, :K])[:, None])
    gr = np.zeros_like(zr)
    gr[:, :K] = pr[:, :K] - pk_r
    gr[:, K] = pr[:, K]
    gr *= keep_r[:, None] / zr.shape[0]

    lse_f = _lse(zf)
    log_fake = zf[:, K] - lse_f
    keep_f = log_fake > LOG_FLOOR
    loss_f = -np.maximum(log_fake, LOG_FLOOR).mean()
    gf = np.exp(zf - lse_f[:, None])
    gf[:, K] -= 1.0
    gf *= keep_f[:, None] / zf.shape[0]
    return float(loss_r + loss_f), gr, gf


def loss_generator_fm(f_real, f_fake):
    """||mean(f_real) - mean(f_fake)||^2 and its gradient w.r.t. ``f_fake``."""
    f_real = np.asarray(f_real, dtype=np.float64)
    f_fake = np.asarray(f_fake, dtype=np.float64)
    if f_real.shape[1] != f_fake.shape[1]:
        raise ValueError("feature widths differ")
    diff = f_fake.mean(axis=0) - f_real.mean(axis=0)
    grad = np.broadcast_to(2.0 * diff / f_fake.shape[0], f_fake.shape).copy()
    return float(diff @ diff), grad


def outlier_probability(logits):
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))[:, -1]


def inlier_class(logits):
    logits = np.asarray(logits, dtype=np.float64)
    return np.argmax(logits[:, :-1], axis=1)


@dataclass
class TrainHistory:
    supervised: list = field(default_factory=list)
    unsupervised: list = field(default_factory=list)
    feature_matching: list = field(default_factory=list)


class SSGAN:
    """Generator, discriminator and the preprocessing they were trained with.

    ``feature_map`` maps raw spectra to SOM memberships (None for
    spectra-only models); ``standardizer`` maps raw spectra to the
    discriminator's spectral input.
    """

    def __init__(self, cfg: TrainConfig, bands: int, n_classes: int, standardizer: Standardizer,
                 feature_map=None):
        if cfg.uses_som and feature_map is None:
            raise ConfigError("spectra+som model needs a SOM feature map")
        if not cfg.uses_som and feature_map is not None:
            raise ConfigError("spectra-only model must not carry a SOM feature map")
        self.cfg, self.bands, self.n_classes = cfg, bands, n_classes
        self.standardizer, self.feature_map = standardizer, feature_map
        root = np.random.SeedSequence(cfg.seed)
        init_seq, self._batch_seq, self._noise_seq = root.spawn(3)
        rng = np.random.default_rng(init_seq)
        self.disc = Discriminator(bands, n_classes, feature_map.size if feature_map else None,
                                  cfg.spec_widths, cfg.som_widths, rng, cfg.slope, cfg.init_std)
        self.gen = None
        if cfg.semi:
            self.gen = Generator(cfg.noise_dim, bands, cfg.gen_hidden, rng, cfg.slope, cfg.init_std)

    # -- inference -------------------------------------------------------
    def inputs(self, X_raw):
        X_raw = np.atleast_2d(np.asarray(X_raw, dtype=np.float64))
        som = self.feature_map(X_raw) if self.feature_map is not None else None
        return self.standardizer.transform(X_raw), som

    def logits(self, X_raw=None, *, spectra=None, som=None):
        """Eval-mode logits from raw spectra, or from prepared inputs."""
        if X_raw is not None:
            spectra, som = self.inputs(X_raw)
        return self.disc.forward(spectra, som, train=False)[0]

    def outlier_score(self, X_raw=None, **kw) -> np.ndarray:
        return outlier_probability(self.logits(X_raw, **kw))

    def classify_inlier(self, X_raw=None, **kw) -> np.ndarray:
        return inlier_class(self.logits(X_raw, **kw))

    def generate(self, n, rng=None):
        if self.gen is None:
            raise ConfigError("supervised-only model has no generator")
        z = sample_uniform_noise(rng, n, self.cfg.noise_dim)
        return self.standardizer.inverse(self.gen.forward(z, train=False))

    # -- parameters ------------------------------------------------------
    def state(self) -> dict:
        out = {}
        for key, layer, k in self.disc.named_params():
            out[f"D.{key}"] = layer.params[k]
        if self.gen is not None:
            for key, layer, k in self.gen.net.named_params():
                out[f"G.{key}"] = layer.params[k]
            for i, layer in enumerate(self.gen.net.layers):
                if isinstance(layer, BatchNorm):
                    out[f"G.{i}.running_mean"] = layer.running_mean
                    out[f"G.{i}.running_var"] = layer.running_var
        return out

    def load_state(self, arrays: dict) -> None:
        for key, layer, k in self.disc.named_params():
            layer.params[k] = np.array(arrays[f"D.{key}"], dtype=np.float64)
        if self.gen is not None:
            for key, layer, k in self.gen.net.named_params():
                layer.params[k] = np.array(arrays[f"G.{key}"], dtype=np.float64)
            for i, layer in enumerate(self.gen.net.layers):
                if isinstance(layer, BatchNorm):
                    layer.running_mean = np.array(arrays[f"G.{i}.running_mean"])
                    layer.running_var = np.array(arrays[f"G.{i}.running_var"])


def _som_or_none(model, X_raw):
    return model.feature_map(X_raw) if model.feature_map is not None else None


def discriminator_step_grads(model: SSGAN, lab, unl=None, fake=None):
    """Forward/backward of the discriminator loss on prepared batches.

    Each batch is ``(spectra, som)``; ``lab`` also carries labels as a third
    item. Returns ``(sup_loss, unsup_loss)``; gradients are left on the layers.
    """
    xs, ss, y = lab
    parts_x, parts_s, sizes = [xs], [ss], [xs.shape[0]]
    if unl is not None:
        for x, s in (unl, fake):
            parts_x.append(x), parts_s.append(s), sizes.append(x.shape[0])
    X = np.vstack(parts_x)
    S = None if model.disc.som is None else np.vstack(parts_s)
    logits, _ = model.disc.forward(X, S, train=True)
    cuts = np.cumsum(sizes)[:-1]
    chunks = np.split(logits, cuts)
    sup, g_lab = loss_supervised(chunks[0], y)
    grads = [g_lab]
    unsup = 0.0
    if unl is not None:
        unsup, g_real, g_fake = loss_unsupervised_D(chunks[1], chunks[2])
        grads += [g_real, g_fake]
    model.disc.backward(np.vstack(grads))
    return sup, unsup


def generator_step_grads(model: SSGAN, real, z):
    """Feature-matching loss for noise ``z`` against real batch ``real``.

    Only the discriminator's feature layer enters the generator objective, so
    the K+1 read-out contributes nothing to the generator gradient. Leaves
    gradients on the generator layers and returns the loss.
    """
    f_real = model.disc.features(real[0], real[1], train=True)
    x_fake = model.gen.forward(z, train=True)
    s_fake = _som_or_none(model, model.standardizer.inverse(x_fake))
    f_fake = model.disc.features(x_fake, s_fake, train=True)
    loss, df = loss_generator_fm(f_real, f_fake)
    dx = model.disc.backward(None, df)
    model.gen.backward(dx)
    return loss


def train(model: SSGAN, labeled, unlabeled=None, log=None) -> TrainHistory:
    """Train ``model`` on prepared data.

    ``labeled`` is ``(spectra, som, labels)`` with labels being class indices
    or OUTLIER; ``unlabeled`` is ``(spectra, som)`` and is required in
    semi-supervised mode. Spectra are already standardized; SOM entries are
    memberships (or None for spectra-only models).
    """
    cfg = model.cfg
    Xl, Sl, yl = labeled
    if cfg.semi and unlabeled is None:
        raise ConfigError("semi-supervised training needs unlabeled data")
    if (Sl is None) == cfg.uses_som:
        raise ConfigError("SOM features must be given exactly when the model uses them")
    batch_rng = np.random.default_rng(model._batch_seq)
    noise_rng = np.random.default_rng(model._noise_seq)
    bs = cfg.batch_size
    n_unl = 0 if unlabeled is None else unlabeled[0].shape[0]
    if cfg.steps_per_epoch is not None:
        steps = cfg.steps_per_epoch
    else:
        steps = math.ceil((n_unl if cfg.semi else Xl.shape[0]) / bs)

    d_opt = Adam(cfg.lr, cfg.beta1, cfg.beta2)
    g_opt = Adam(cfg.lr, cfg.beta1, cfg.beta2)

    # data-dependent weight-norm initialisation on a first real batch
    pool_x = Xl if not cfg.semi else np.vstack([Xl, unlabeled[0][:bs]])
    pool_s = None if Sl is None else (Sl if not cfg.semi else np.vstack([Sl, unlabeled[1][:bs]]))
    model.disc.data_init(pool_x, pool_s)
    if model.gen is not None:
        model.gen.data_init(sample_uniform_noise(noise_rng, bs, cfg.noise_dim))

    hist = TrainHistory()
    for epoch in range(cfg.epochs):
        order = batch_rng.permutation(n_unl) if cfg.semi else None
        sums = np.zeros(3)
        for step in range(steps):
            li = batch_rng.integers(Xl.shape[0], size=bs)
            lab = (Xl[li], None if Sl is None else Sl[li], yl[li])
            if cfg.semi:
                ui = order[(np.arange(bs) + step * bs) % n_unl]
                unl = (unlabeled[0][ui], None if unlabeled[1] is None else unlabeled[1][ui])
                z = sample_uniform_noise(noise_rng, bs, cfg.noise_dim)
                x_fake = model.gen.forward(z, train=True)
                fake = (x_fake, _som_or_none(model, model.standardizer.inverse(x_fake)))
                sup, unsup = discriminator_step_grads(model, lab, unl, fake)
                d_opt.step((k, layer.params, n, layer.grads[n]) for k, layer, n in model.disc.named_params())

                z = sample_uniform_noise(noise_rng, bs, cfg.noise_dim)
                fm = generator_step_grads(model, unl, z)
                g_opt.step_model(model.gen.net)
            else:
                sup, unsup = discriminator_step_grads(model, lab)
                fm = 0.0
                d_opt.step((k, layer.params, n, layer.grads[n]) for k, layer, n in model.disc.named_params())
            sums += (sup, unsup, fm)
        means = sums / steps
        if not np.all(np.isfinite(means)):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        hist.supervised.append(float(means[0]))
        hist.unsupervised.append(float(means[1]))
        hist.feature_matching.append(float(means[2]))
        if log is not None:
            log(epoch, means)
    return hist


def save_model(path_prefix, model: SSGAN, meta: dict | None = None) -> None:
    """Checkpoint parameters, standardizer and config; the SOM feature map is stored separately."""
    arrays = dict(model.state())
    arrays["Z.mean"] = model.standardizer.mean
    arrays["Z.std"] = model.standardizer.std
    info = {"train": model.cfg.to_dict(), "bands": model.bands, "classes": model.n_classes}
    info.update(meta or {})
    save_checkpoint(path_prefix, arrays, info)


def load_model(path_prefix, feature_map=None) -> tuple[SSGAN, dict]:
    arrays, meta = load_checkpoint(path_prefix)
    cfg = TrainConfig(**meta["train"])
    if cfg.uses_som and feature_map is None:
        raise ConfigError(f"{path_prefix}: spectra+som model needs its SOM feature map")
    z = Standardizer(arrays["Z.mean"], arrays["Z.std"])
    model = SSGAN(cfg, int(meta["bands"]), int(meta["classes"]), z, feature_map if cfg.uses_som else None)
    model.load_state(arrays)
    return model, meta
