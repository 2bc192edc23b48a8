"""Sigmoid membership values over SOM distances.

Every node j owns a decreasing sigmoid ``O = 1 / (1 + exp(alpha_j (d - beta_j)))``.
The pairs are fitted so that a sample's best matching unit responds with 1,
its 4-connected neighbours with 0.5, the rest of its 3x3 block with 0.25 and
all other nodes with 0. Outliers, being far from every node, then end up with
uniformly small memberships.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import DataError, DimensionError
from .nn import DivergenceError
from .som import (ANGLE_WEIGHT, NodeStats, SomConfig, SomGrid, dstar_features,
                  estimate_node_stats, load_stats, load_weights_csv, save_stats, save_weights_csv,
                  train_som)

ALPHA_MIN = 1e-4


def membership(d, alpha, beta):
    """Sigmoid membership; stable for any magnitude of ``alpha * (d - beta)``."""
    return expit(-np.asarray(alpha) * (np.asarray(d, dtype=np.float64) - np.asarray(beta)))


@dataclass
class SigmoidLayer:
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64).copy()
        self.beta = np.asarray(self.beta, dtype=np.float64).copy()
        if self.alpha.shape != self.beta.shape or self.alpha.ndim != 1:
            raise DimensionError("alpha and beta must be vectors of equal length")

    @property
    def size(self) -> int:
        return self.alpha.shape[0]

    def __call__(self, D) -> np.ndarray:
        D = np.asarray(D, dtype=np.float64)
        if D.shape[-1] != self.size:
            raise DimensionError(f"expected {self.size} distances, got {D.shape[-1]}")
        return membership(D, self.alpha, self.beta)

    def copy(self) -> "SigmoidLayer":
        return SigmoidLayer(self.alpha, self.beta)


def target_pattern(grid: SomGrid, bmu: int) -> np.ndarray:
    """1 at the BMU, 0.5 on its 4-neighbours, 0.25 on the 3x3 corners, 0 elsewhere."""
    t = np.zeros(grid.size)
    r0, c0 = grid.position(bmu)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            r, c = r0 + dr, c0 + dc
            if 0 <= r < grid.rows and 0 <= c < grid.cols:
                t[grid.index(r, c)] = {0: 1.0, 1: 0.5, 2: 0.25}[abs(dr) + abs(dc)]
    return t


def make_targets(grid: SomGrid, stats: NodeStats, samples, angle_weight: float = ANGLE_WEIGHT,
                 distances=None) -> np.ndarray:
    """Target table of shape ``(N, rows*cols)``; BMUs are taken under D*.

    ``distances`` may carry precomputed D* features for ``samples``.
    """
    D = dstar_features(grid, stats, np.atleast_2d(samples), angle_weight) if distances is None else np.atleast_2d(distances)
    patterns = np.stack([target_pattern(grid, j) for j in range(grid.size)])
    return patterns[np.argmin(D, axis=1)]


def init_layer(D, targets) -> SigmoidLayer:
    """Place each sigmoid's midpoint at the mean distance of the samples it wins.

    ``alpha = 4 / beta`` puts memberships near 0.98 at d = 0 and 0.02 at d = 2*beta.
    Nodes that win nothing fall back to the mean best-match distance.
    """
    D = np.asarray(D, dtype=np.float64)
    T = np.asarray(targets)
    bmu = np.argmax(T, axis=1)
    fallback = float(D.min(axis=1).mean())
    J = D.shape[1]
    beta = np.full(J, fallback)
    for j in range(J):
        won = bmu == j
        if np.any(won):
            beta[j] = D[won, j].mean()
    floor = max(1e-6 * fallback, 1e-12)
    beta = np.maximum(beta, floor)
    return SigmoidLayer(4.0 / beta, beta)


def loss_and_grads(layer: SigmoidLayer, D, T):
    """E = sum_i 1/2 sum_j (t_ij - O_ij)^2 and its gradients w.r.t. alpha and beta."""
    D = np.asarray(D, dtype=np.float64)
    O = layer(D)
    R = O - T
    E = 0.5 * float((R * R).sum())
    s = R * O * (1.0 - O)
    g_alpha = -(s * (D - layer.beta)).sum(axis=0)
    g_beta = (s * layer.alpha).sum(axis=0)
    return E, g_alpha, g_beta


def train_sigmoids(layer: SigmoidLayer, D, targets, lr: float = 0.05, epochs: int = 500,
                   scale: float | None = None):
    """Full-batch gradient descent on the squared-error target objective.

    Steps are taken on the per-sample mean gradient in distance-normalized
    coordinates ``a = alpha * scale``, ``b = beta / scale`` (``scale`` defaults
    to the mean best-match distance), which leaves the objective unchanged but
    keeps one learning rate sensible for both parameters. Returns the trained
    layer and the per-epoch loss E, with the initial loss first.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    D = np.asarray(D, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    if D.shape != T.shape or D.shape[1] != layer.size:
        raise DimensionError("distances, targets and layer disagree in shape")
    if D.shape[0] == 0:
        raise DataError("no samples to fit memberships on")
    if scale is None:
        scale = float(D.min(axis=1).mean()) or 1.0
    n = D.shape[0]
    out = layer.copy()
    trace = []
    for epoch in range(epochs + 1):
        E, ga, gb = loss_and_grads(out, D, T)
        if not np.isfinite(E):
            raise DivergenceError(f"membership loss became non-finite at epoch {epoch}")
        trace.append(E)
        if epoch == epochs:
            break
        a = out.alpha * scale - lr * (ga / scale) / n
        b = out.beta / scale - lr * (gb * scale) / n
        out.alpha = np.maximum(a / scale, ALPHA_MIN)
        out.beta = b * scale
    return out, np.array(trace)


def som_feature_vector(grid: SomGrid, stats: NodeStats, layer: SigmoidLayer, x,
                       angle_weight: float = ANGLE_WEIGHT) -> np.ndarray:
    return layer(dstar_features(grid, stats, x, angle_weight))


def save_layer_csv(path: str | os.PathLike, layer: SigmoidLayer) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "alpha", "beta"])
        for j, (a, b) in enumerate(zip(layer.alpha, layer.beta)):
            w.writerow([j, repr(float(a)), repr(float(b))])


def load_layer_csv(path: str | os.PathLike) -> SigmoidLayer:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    rows.sort(key=lambda r: int(r[0]))
    return SigmoidLayer([float(r[1]) for r in rows], [float(r[2]) for r in rows])


@dataclass(frozen=True)
class SomFeatureMap:
    """Trained SOM, node statistics and sigmoids: raw spectra in, memberships out."""

    grid: SomGrid
    stats: NodeStats
    layer: SigmoidLayer
    angle_weight: float = ANGLE_WEIGHT

    @property
    def size(self) -> int:
        return self.grid.size

    def distances(self, X) -> np.ndarray:
        return dstar_features(self.grid, self.stats, X, self.angle_weight)

    def __call__(self, X) -> np.ndarray:
        return self.layer(self.distances(X))


def fit_feature_map(X, shape=(10, 10), som_cfg=None, ridge=None, lr=0.05, epochs=500,
                    angle_weight: float = ANGLE_WEIGHT):
    """SOM -> node stats -> targets -> sigmoids on raw spectra ``X``.

    Returns the feature map and the sigmoid loss trace.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    grid = train_som(X, som_cfg or SomConfig(), shape)
    stats = estimate_node_stats(grid, X, ridge)
    D = dstar_features(grid, stats, X, angle_weight)
    T = make_targets(grid, stats, X, angle_weight, distances=D)
    layer, trace = train_sigmoids(init_layer(D, T), D, T, lr=lr, epochs=epochs)
    return SomFeatureMap(grid, stats, layer, angle_weight), trace


def save_feature_map(directory: str | os.PathLike, fmap: SomFeatureMap, trace=None) -> None:
    """Write weights, node statistics, sigmoids and (optionally) the sigmoid loss trace."""
    os.makedirs(directory, exist_ok=True)
    save_weights_csv(os.path.join(directory, "weights.csv"), fmap.grid)
    save_stats(os.path.join(directory, "stats.npz"), fmap.stats)
    save_layer_csv(os.path.join(directory, "sigmoids.csv"), fmap.layer)
    if trace is not None:
        with open(os.path.join(directory, "sigmoid_loss.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "E"])
            for i, e in enumerate(trace):
                w.writerow([i, repr(float(e))])
    manifest = {"rows": fmap.grid.rows, "cols": fmap.grid.cols, "bands": fmap.grid.bands,
                "angle_weight": fmap.angle_weight, "ridge": fmap.stats.ridge}
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_feature_map(directory: str | os.PathLike) -> SomFeatureMap:
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    grid = load_weights_csv(os.path.join(directory, "weights.csv"))
    stats = load_stats(os.path.join(directory, "stats.npz"))
    layer = load_layer_csv(os.path.join(directory, "sigmoids.csv"))
    if layer.size != grid.size or stats.cov.shape[0] != grid.size:
        raise DimensionError(f"{directory}: SOM artifacts disagree in node count")
    return SomFeatureMap(grid, stats, layer, float(manifest["angle_weight"]))
