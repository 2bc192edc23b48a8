"""Spectra, labels, datasets, CSV ingestion and per-band standardization.

Spectra are plain float64 numpy arrays; a batch of spectra is an ``(N, B)``
array. Labels are stored as integers: ``k >= 0`` is inlier class ``k``,
:data:`OUTLIER` and :data:`UNLABELED` are negative sentinels.
"""
from __future__ import annotations

import csv
import os
import zipfile
from dataclasses import dataclass, field

import numpy as np

OUTLIER = -1
UNLABELED = -2

STD_FLOOR = 1e-8


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class DimensionError(DataError):
    """Band count disagrees with the rest of the data."""


def parse_label(text: str, class_count: int | None = None) -> int:
    t = text.strip().lower()
    if t == "outlier":
        return OUTLIER
    if t == "unlabeled":
        return UNLABELED
    try:
        k = int(t)
    except ValueError:
        raise DataError(f"unknown label code {text!r}") from None
    if k < 0 or (class_count is not None and k >= class_count):
        raise DataError(f"class index {k} out of range")
    return k


def format_label(code: int) -> str:
    if code == OUTLIER:
        return "outlier"
    if code == UNLABELED:
        return "unlabeled"
    if code < 0:
        raise DataError(f"invalid label code {code}")
    return str(int(code))


def as_spectrum(values, *, nonzero: bool = False) -> np.ndarray:
    """Validate and return a 1-D float64 spectrum."""
    s = np.asarray(values, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise DimensionError(f"spectrum must be a non-empty vector, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise DataError("spectrum contains non-finite values")
    if nonzero and not np.any(s):
        raise DataError("spectrum has zero norm")
    return s


@dataclass(frozen=True)
class Dataset:
    """Spectra ``X`` of shape ``(N, B)`` with integer label codes ``y``."""

    X: np.ndarray
    y: np.ndarray
    class_count: int
    ids: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2:
            raise DimensionError(f"X must be 2-D, got shape {X.shape}")
        if X.shape[1] == 0:
            raise DimensionError("band count must be positive")
        if y.shape != (X.shape[0],):
            raise DimensionError("one label per sample required")
        if self.class_count < 2:
            raise DataError("at least two inlier classes are required")
        if not np.all(np.isfinite(X)):
            raise DataError("spectra contain non-finite values")
        if np.any(y >= self.class_count) or np.any((y < 0) & (y != OUTLIER) & (y != UNLABELED)):
            raise DataError("label code out of range")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.ids is not None:
            ids = np.asarray(self.ids, dtype=np.int64)
            if ids.shape != y.shape:
                raise DimensionError("one id per sample required")
            object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.X.shape[0]

    @property
    def band_count(self) -> int:
        return self.X.shape[1]

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        ids = None if self.ids is None else self.ids[mask]
        return Dataset(self.X[mask], self.y[mask], self.class_count, ids)

    def inliers(self) -> "Dataset":
        return self.subset(self.y >= 0)


def concat(parts: list[Dataset]) -> Dataset:
    if not parts:
        raise DataError("nothing to concatenate")
    K = parts[0].class_count
    B = parts[0].band_count
    for p in parts:
        if p.band_count != B:
            raise DimensionError("band counts differ")
    ids = None
    if all(p.ids is not None for p in parts):
        ids = np.concatenate([p.ids for p in parts])
    return Dataset(np.vstack([p.X for p in parts]), np.concatenate([p.y for p in parts]), K, ids)


def load_csv(path: str | os.PathLike, class_count: int | None = None) -> Dataset:
    """Read ``b0,...,b{B-1},label`` rows into a :class:`Dataset`.

    When ``class_count`` is omitted it is inferred as ``max class + 1``
    (at least 2).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not header or header[-1].strip() != "label":
        raise DataError(f"{path}: header must end with a 'label' column")
    B = len(header) - 1
    if B < 1:
        raise DimensionError(f"{path}: no band columns")
    if not body:
        raise DataError(f"{path}: no data rows")
    X = np.empty((len(body), B))
    y = np.empty(len(body), dtype=np.int64)
    for i, row in enumerate(body):
        if len(row) != B + 1:
            raise DimensionError(f"{path}: row {i} has {len(row) - 1} bands, expected {B}")
        try:
            X[i] = [float(v) for v in row[:-1]]
        except ValueError:
            raise DataError(f"{path}: row {i} has a non-numeric band value") from None
        y[i] = parse_label(row[-1], class_count)
    if class_count is None:
        class_count = max(2, int(y.max()) + 1 if np.any(y >= 0) else 2)
    return Dataset(X, y, class_count)


def save_csv(path: str | os.PathLike, data: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"b{i}" for i in range(data.band_count)] + ["label"])
        for x, code in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in x] + [format_label(int(code))])


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1:
            raise DimensionError("mean and std must be vectors of equal length")
        if np.any(std < STD_FLOOR):
            raise DataError("std entries must be >= the floor")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def identity(cls, bands: int) -> "Standardizer":
        return cls(np.zeros(bands), np.ones(bands))

    def _check(self, s):
        s = np.asarray(s, dtype=np.float64)
        if s.shape[-1] != self.mean.shape[0]:
            raise DimensionError(f"expected {self.mean.shape[0]} bands, got {s.shape[-1]}")
        return s

    def transform(self, s) -> np.ndarray:
        return (self._check(s) - self.mean) / self.std

    def inverse(self, s) -> np.ndarray:
        return self._check(s) * self.std + self.mean


def fit_standardizer(data: Dataset | np.ndarray, subset=None) -> Standardizer:
    """Per-band population mean/std over the selected samples.

    ``subset`` is a boolean mask, a callable on label codes, or None for all.
    """
    if isinstance(data, Dataset):
        X = data.X
        if callable(subset):
            X = X[subset(data.y)]
        elif subset is not None:
            X = X[np.asarray(subset)]
    else:
        X = np.asarray(data, dtype=np.float64)
        if subset is not None:
            X = X[np.asarray(subset)]
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("cannot fit a standardizer on an empty subset")
    return Standardizer(X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR))


def standardize(s, z: Standardizer) -> np.ndarray:
    return z.transform(s)


def save_npz(path: str | os.PathLike, arrays: dict) -> None:
    """Uncompressed ``.npz`` with fixed member timestamps, so equal arrays give equal bytes."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, a in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asanyarray(a), allow_pickle=False)
