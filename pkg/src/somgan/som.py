"""Kohonen self-organizing map with a hybrid Mahalanobis / spectral-angle distance.

The map is trained with the classic online rule on raw reflectance. Each node
then receives its own covariance, estimated from the training spectra whose
Euclidean best matching unit it is, and the distance used downstream is

    D*(x, node j) = mahalanobis(x, w_j; S_j + lam*I) + 40 * angle(x, w_j)
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .core import DataError, DimensionError, save_npz

ANGLE_WEIGHT = 40.0


@dataclass(frozen=True)
class SomConfig:
    epochs: int = 40
    lr_start: float = 0.5
    lr_end: float = 0.01
    sigma_start: float | None = None  # None -> max(rows, cols) / 2
    sigma_end: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("need lr_start >= lr_end > 0")
        if self.sigma_start is not None and not self.sigma_start >= self.sigma_end:
            raise ValueError("need sigma_start >= sigma_end")
        if not self.sigma_end > 0:
            raise ValueError("sigma_end must be positive")


class SomGrid:
    """Rectangular lattice of node weight vectors, flat index ``j = r*cols + c``."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 3 or w.shape[0] < 1 or w.shape[1] < 1 or w.shape[2] < 1:
            raise DimensionError(f"weights must have shape (rows, cols, B), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise DataError("non-finite SOM weights")
        self.rows, self.cols, self.bands = w.shape
        self._w = w.reshape(self.rows * self.cols, self.bands).copy()
        self._w.setflags(write=False)
        r, c = np.divmod(np.arange(self.size), self.cols)
        self.coords = np.stack([r, c], axis=1).astype(np.float64)

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def weights(self) -> np.ndarray:
        """Node weights as an ``(rows*cols, B)`` array in flat-index order."""
        return self._w

    def index(self, r: int, c: int) -> int:
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise IndexError((r, c))
        return r * self.cols + c

    def position(self, j: int) -> tuple[int, int]:
        if not 0 <= j < self.size:
            raise IndexError(j)
        return divmod(int(j), self.cols)


def _as_batch(X, bands=None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionError(f"expected a batch of spectra, got shape {X.shape}")
    if bands is not None and X.shape[1] != bands:
        raise DimensionError(f"expected {bands} bands, got {X.shape[1]}")
    return X


def train_som(data, cfg: SomConfig, shape: tuple[int, int]) -> SomGrid:
    """Online Kohonen training with exponentially decaying rate and radius.

    Weights start as training samples drawn (with replacement when the map
    has more nodes than there are samples) under ``cfg.seed``. Each epoch
    visits the samples in a fresh random order.
    """
    X = _as_batch(data)
    if X.shape[0] == 0:
        raise DataError("cannot train a SOM on no data")
    rows, cols = shape
    if rows < 1 or cols < 1:
        raise ValueError("grid shape must be at least 1x1")
    rng = np.random.default_rng(cfg.seed)
    n_nodes = rows * cols
    pick = rng.choice(X.shape[0], size=n_nodes, replace=n_nodes > X.shape[0])
    W = X[pick].copy()

    grid = SomGrid(W.reshape(rows, cols, -1))
    coords = grid.coords
    sq_grid = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)

    s0 = cfg.sigma_start if cfg.sigma_start is not None else max(rows, cols) / 2.0
    s0 = max(s0, cfg.sigma_end)
    total = cfg.epochs * X.shape[0]
    # fraction of training elapsed at each step; a single step uses the start values
    frac = np.arange(total) / max(total - 1, 1)
    lrs = cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac
    sigmas = s0 * (cfg.sigma_end / s0) ** frac

    t = 0
    for _ in range(cfg.epochs):
        for i in rng.permutation(X.shape[0]):
            x = X[i]
            d2 = ((W - x) ** 2).sum(axis=1)
            b = int(np.argmin(d2))
            h = np.exp(-sq_grid[b] / (2.0 * sigmas[t] ** 2))
            W += (lrs[t] * h)[:, None] * (x - W)
            t += 1
    return SomGrid(W.reshape(rows, cols, -1))


def sq_euclidean(grid: SomGrid, X) -> np.ndarray:
    X = _as_batch(X, grid.bands)
    W = grid.weights
    d2 = (X * X).sum(1)[:, None] - 2.0 * X @ W.T + (W * W).sum(1)[None, :]
    return np.maximum(d2, 0.0)


def bmu_euclidean(grid: SomGrid, x) -> int | np.ndarray:
    """Index of the nearest node; ties resolve to the smallest flat index.

    Accepts a single spectrum (returns an int) or a batch (returns an array).
    """
    single = np.asarray(x).ndim == 1
    X = _as_batch(x, grid.bands)
    # exact differences, so equal distances compare equal for the tie rule
    d2 = np.stack([((X - w) ** 2).sum(axis=1) for w in grid.weights], axis=1)
    idx = np.argmin(d2, axis=1)
    return int(idx[0]) if single else idx


@dataclass(frozen=True)
class NodeStats:
    """Per-node covariance, the Cholesky factor of ``S_j + lam*I`` and its inverse."""

    cov: np.ndarray        # (J, B, B)
    chol: np.ndarray       # (J, B, B), lower
    inv_factor: np.ndarray  # (J, B, B), inverse of chol
    counts: np.ndarray     # (J,)
    ridge: float

    @classmethod
    def from_covariances(cls, cov, counts, ridge: float) -> "NodeStats":
        cov = np.asarray(cov, dtype=np.float64)
        if ridge <= 0:
            raise ValueError("ridge must be positive")
        J, B, _ = cov.shape
        eye = np.eye(B)
        chol = np.empty_like(cov)
        inv = np.empty_like(cov)
        for j in range(J):
            try:
                chol[j] = np.linalg.cholesky(cov[j] + ridge * eye)
            except np.linalg.LinAlgError as e:  # pragma: no cover - unreachable for ridge > 0
                raise ArithmeticError(f"Cholesky failed for node {j}") from e
            inv[j] = solve_triangular(chol[j], eye, lower=True)
        return cls(cov, chol, inv, np.asarray(counts, dtype=np.int64), float(ridge))


def default_ridge(X) -> float:
    """1e-3 times the mean per-band (population) variance of ``X``."""
    X = _as_batch(X)
    v = float(X.var(axis=0).mean())
    return 1e-3 * v if v > 0 else 1e-3


def estimate_node_stats(grid: SomGrid, data, ridge: float | None = None) -> NodeStats:
    X = _as_batch(data, grid.bands)
    if ridge is None:
        ridge = default_ridge(X)
    bmu = bmu_euclidean(grid, X)
    B = grid.bands
    cov = np.zeros((grid.size, B, B))
    counts = np.bincount(bmu, minlength=grid.size)
    for j in range(grid.size):
        if counts[j] > 1:
            Xj = X[bmu == j]
            D = Xj - Xj.mean(axis=0)
            cov[j] = D.T @ D / counts[j]
    return NodeStats.from_covariances(cov, counts, ridge)


def mahalanobis(x, w, inv_factor) -> float | np.ndarray:
    """sqrt((x-w)^T (L L^T)^{-1} (x-w)) given ``inv_factor = L^{-1}``."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.shape[-1] != w.shape[-1] or inv_factor.shape[-1] != w.shape[-1]:
        raise DimensionError("dimension mismatch in mahalanobis")
    z = (x - w) @ inv_factor.T
    return np.sqrt((z * z).sum(axis=-1))


def spectral_angle(x, y) -> float | np.ndarray:
    """Angle in radians between spectra; broadcasts over leading axes."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1] != y.shape[-1]:
        raise DimensionError("dimension mismatch in spectral_angle")
    nx = np.linalg.norm(x, axis=-1)
    ny = np.linalg.norm(y, axis=-1)
    if np.any(nx == 0) or np.any(ny == 0):
        raise DataError("spectral angle undefined for a zero-norm spectrum")
    cos = (x * y).sum(axis=-1) / (nx * ny)
    return np.arccos(np.clip(cos, -1.0, 1.0))


def combine(mahal, angle, angle_weight: float = ANGLE_WEIGHT):
    return mahal + angle_weight * angle


def dstar(x, grid: SomGrid, stats: NodeStats, j: int, angle_weight: float = ANGLE_WEIGHT) -> float:
    x = np.asarray(x, dtype=np.float64)
    w = grid.weights[j]
    return float(combine(mahalanobis(x, w, stats.inv_factor[j]), spectral_angle(x, w), angle_weight))


def dstar_features(grid: SomGrid, stats: NodeStats, X, angle_weight: float = ANGLE_WEIGHT) -> np.ndarray:
    """D* from each spectrum to every node, shape ``(N, rows*cols)`` (or ``(J,)`` for one spectrum)."""
    single = np.asarray(X).ndim == 1
    X = _as_batch(X, grid.bands)
    W = grid.weights
    nx = np.linalg.norm(X, axis=1)
    nw = np.linalg.norm(W, axis=1)
    if np.any(nx == 0) or np.any(nw == 0):
        raise DataError("spectral angle undefined for a zero-norm spectrum")
    cos = (X @ W.T) / (nx[:, None] * nw[None, :])
    angle = np.arccos(np.clip(cos, -1.0, 1.0))
    # (x - w) L^-T for every node at once: X L^-T - w L^-T
    XL = np.einsum("nb,jcb->njc", X, stats.inv_factor)
    WL = np.einsum("jb,jcb->jc", W, stats.inv_factor)
    Z = XL - WL[None]
    mahal = np.sqrt((Z * Z).sum(axis=2))
    out = combine(mahal, angle, angle_weight)
    return out[0] if single else out


def bmu_dstar(grid: SomGrid, stats: NodeStats, X, angle_weight: float = ANGLE_WEIGHT) -> np.ndarray:
    D = dstar_features(grid, stats, _as_batch(X, grid.bands), angle_weight)
    return np.argmin(D, axis=1)


def bmu_histogram(grid: SomGrid, stats: NodeStats | None, samples: dict, metric: str = "euclidean",
                  angle_weight: float = ANGLE_WEIGHT) -> dict:
    """Per-class counts of how often each node is the closest node."""
    out = {}
    for name, X in samples.items():
        X = _as_batch(X, grid.bands)
        if X.shape[0] == 0:
            raise DataError(f"class {name!r} has no samples")
        if metric == "euclidean":
            bmu = bmu_euclidean(grid, X)
        elif metric == "dstar":
            if stats is None:
                raise ValueError("dstar histograms need node stats")
            bmu = bmu_dstar(grid, stats, X, angle_weight)
        else:
            raise ValueError(f"unknown metric {metric!r}")
        out[name] = np.bincount(bmu, minlength=grid.size)
    return out


def save_weights_csv(path: str | os.PathLike, grid: SomGrid) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "c"] + [f"b{i}" for i in range(grid.bands)])
        for j, wj in enumerate(grid.weights):
            r, c = grid.position(j)
            w.writerow([r, c] + [repr(float(v)) for v in wj])


def load_weights_csv(path: str | os.PathLike) -> SomGrid:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    if not rows:
        raise DataError(f"{path}: no SOM nodes")
    rc = np.array([[int(r[0]), int(r[1])] for r in rows])
    vals = np.array([[float(v) for v in r[2:]] for r in rows])
    n_rows, n_cols = rc[:, 0].max() + 1, rc[:, 1].max() + 1
    W = np.empty((n_rows, n_cols, vals.shape[1]))
    W[rc[:, 0], rc[:, 1]] = vals
    return SomGrid(W)


def save_histogram_csv(path: str | os.PathLike, hist: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        size = len(next(iter(hist.values())))
        w.writerow(["class"] + [f"n{j}" for j in range(size)])
        for name, counts in hist.items():
            w.writerow([name] + [int(c) for c in counts])


def save_stats(path: str | os.PathLike, stats: NodeStats) -> None:
    save_npz(path, {"cov": stats.cov, "counts": stats.counts, "ridge": np.array(stats.ridge)})


def load_stats(path: str | os.PathLike) -> NodeStats:
    with np.load(path) as z:
        return NodeStats.from_covariances(z["cov"], z["counts"], float(z["ridge"]))
