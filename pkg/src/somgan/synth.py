"""Synthetic reflectance scenes and the labeled/unlabeled/test sampling protocol."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import OUTLIER, UNLABELED, Dataset


@dataclass(frozen=True)
class MaterialModel:
    """A smooth base curve observed under random illumination plus noise.

    ``bumps`` holds ``(center, width, amplitude)`` triples on a [0, 1]
    wavelength axis; ``offset`` is a flat floor added to the bumps.
    ``role`` is an inlier class index or an outlier family name.
    """

    name: str
    role: int | str
    bumps: tuple = ()
    offset: float = 0.0
    slope: float = 0.0
    illum: tuple = (0.7, 1.3)
    noise: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(tuple(map(float, b)) for b in self.bumps))
        object.__setattr__(self, "illum", tuple(map(float, self.illum)))
        if not 0 < self.illum[0] <= self.illum[1]:
            raise ValueError("illumination range must satisfy 0 < lo <= hi")
        if self.noise < 0:
            raise ValueError("noise std must be non-negative")

    @property
    def is_inlier(self) -> bool:
        return isinstance(self.role, int)

    def base(self, bands: int) -> np.ndarray:
        lam = np.linspace(0.0, 1.0, bands)
        curve = np.full(bands, self.offset) + self.slope * lam
        for c, w, a in self.bumps:
            curve += a * np.exp(-0.5 * ((lam - c) / w) ** 2)
        if np.any(curve < 0):
            raise ValueError(f"material {self.name!r} has a negative base curve")
        return curve


def sample_material(m: MaterialModel, n: int, rng, bands: int) -> np.ndarray:
    """``n`` spectra ``u * base + noise`` with ``u ~ U[lo, hi]``, clipped at zero."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(rng)
    base = m.base(bands)
    u = rng.uniform(m.illum[0], m.illum[1], size=(n, 1))
    X = u * base
    if m.noise > 0:
        X = X + rng.normal(0.0, m.noise, size=X.shape)
    return np.maximum(X, 0.0)


@dataclass(frozen=True)
class Scene:
    bands: int
    materials: tuple
    labeled_outlier_family: str = "panel"

    @property
    def inliers(self) -> list[MaterialModel]:
        return sorted((m for m in self.materials if m.is_inlier), key=lambda m: m.role)

    @property
    def outliers(self) -> list[MaterialModel]:
        return [m for m in self.materials if not m.is_inlier]

    @property
    def class_count(self) -> int:
        return len(self.inliers)

    def material(self, name: str) -> MaterialModel:
        for m in self.materials:
            if m.name == name:
                return m
        raise KeyError(name)

    def to_json(self) -> str:
        d = {"bands": self.bands, "labeled_outlier_family": self.labeled_outlier_family,
             "materials": [asdict(m) for m in self.materials]}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        d = json.loads(text)
        mats = tuple(MaterialModel(**m) for m in d["materials"])
        return cls(d["bands"], mats, d["labeled_outlier_family"])


DEFAULT_FAMILIES = ("dark", "panel", "soil", "roof")


def default_scene(bands: int = 32, classes: int = 2, families=DEFAULT_FAMILIES) -> Scene:
    """Vegetation-like inlier classes plus deliberately confusable outliers.

    * ``dark`` is a dimmed, flattened vegetation curve (shadow/water): close to
      the inliers in Euclidean and Mahalanobis terms, far in spectral angle.
    * ``panel`` shares class 0's shape at extreme brightness: zero spectral
      angle to class 0, far in Mahalanobis terms.
    * ``soil`` and ``roof`` have unrelated shapes.
    """
    if classes < 2:
        raise ValueError("need at least two inlier classes")
    mats = []
    noise = 0.02
    for k in range(classes):
        f = k / (classes - 1)
        # same peak positions, class k dimmer and with a slightly shifted red-edge bump
        amp = 1.0 - 0.35 * f
        bumps = ((0.25, 0.06, 0.10 * amp),
                 (0.72 - 0.03 * f, 0.16, 0.50 * amp),
                 (0.45, 0.05, 0.05 * f * amp))
        mats.append(MaterialModel(f"class{k}", k, bumps, offset=0.03 - 0.01 * f, noise=noise))
    veg0 = mats[0]
    known = {
        "dark": MaterialModel("dark", "dark", ((0.25, 0.10, 0.06), (0.7, 0.2, 0.10)), offset=0.10,
                              slope=-0.04, illum=(0.6, 1.0), noise=noise),
        "panel": MaterialModel("panel", "panel", veg0.bumps, offset=veg0.offset, illum=(2.0, 2.6),
                               noise=noise),
        "soil": MaterialModel("soil", "soil", (), offset=0.08, slope=0.28, noise=noise),
        "roof": MaterialModel("roof", "roof", ((0.55, 0.15, 0.30),), offset=0.06, noise=noise),
    }
    for name in families:
        if name not in known:
            raise ValueError(f"unknown outlier family {name!r}")
        mats.append(known[name])
    labeled = "panel" if "panel" in families else families[0]
    return Scene(bands, tuple(mats), labeled)


@dataclass(frozen=True)
class SplitCounts:
    labeled_per_class: int = 10
    labeled_outliers: int = 10
    unlabeled_per_class: int = 500
    unlabeled_outliers: int = 3500
    test_per_class: int = 250
    test_per_family: int = 125

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v <= 0:
                raise ValueError(f"{k} must be positive")


@dataclass(frozen=True)
class ExperimentSplit:
    """Disjoint partitions for one trial.

    ``labeled`` carries class codes and OUTLIER; ``unlabeled`` carries
    UNLABELED codes with the hidden truth in ``unlabeled_truth``; ``test``
    carries class codes and OUTLIER, and ``test_family`` names each sample's
    material.
    """

    labeled: Dataset
    unlabeled: Dataset
    unlabeled_truth: np.ndarray
    test: Dataset
    test_family: np.ndarray
    seed: int
    counts: SplitCounts = field(default_factory=SplitCounts)

    @property
    def class_count(self) -> int:
        return self.labeled.class_count


def make_split(scene: Scene, counts: SplitCounts = SplitCounts(), seed: int = 0) -> ExperimentSplit:
    """Draw one trial's partitions.

    Labeled outliers all come from ``scene.labeled_outlier_family``; the
    unlabeled outliers and the test outliers are spread evenly over every
    outlier family.
    """
    rng = np.random.default_rng(seed)
    B, K = scene.bands, scene.class_count
    next_id = [0]

    def draw(m, n):
        X = sample_material(m, n, rng, B)
        ids = np.arange(next_id[0], next_id[0] + n)
        next_id[0] += n
        return X, ids

    def outlier_mix(n):
        fams = scene.outliers
        which = rng.integers(len(fams), size=n)
        Xs, ids, names = [], [], []
        for f, m in enumerate(fams):
            X, i = draw(m, int((which == f).sum()))
            Xs.append(X)
            ids.append(i)
            names += [m.name] * len(i)
        return np.vstack(Xs), np.concatenate(ids), np.array(names)

    # labeled
    Xs, ys, ids = [], [], []
    for m in scene.inliers:
        X, i = draw(m, counts.labeled_per_class)
        Xs.append(X), ys.append(np.full(len(i), m.role)), ids.append(i)
    X, i = draw(scene.material(scene.labeled_outlier_family), counts.labeled_outliers)
    Xs.append(X), ys.append(np.full(len(i), OUTLIER)), ids.append(i)
    labeled = Dataset(np.vstack(Xs), np.concatenate(ys), K, np.concatenate(ids))

    # unlabeled
    Xs, truth, ids = [], [], []
    for m in scene.inliers:
        X, i = draw(m, counts.unlabeled_per_class)
        Xs.append(X), truth.append(np.full(len(i), m.role)), ids.append(i)
    X, i, _ = outlier_mix(counts.unlabeled_outliers)
    Xs.append(X), truth.append(np.full(len(i), OUTLIER)), ids.append(i)
    order = rng.permutation(sum(len(t) for t in truth))
    Xu = np.vstack(Xs)[order]
    unlabeled = Dataset(Xu, np.full(len(order), UNLABELED), K, np.concatenate(ids)[order])
    unlabeled_truth = np.concatenate(truth)[order]

    # test
    Xs, ys, ids, fam = [], [], [], []
    for m in scene.inliers:
        X, i = draw(m, counts.test_per_class)
        Xs.append(X), ys.append(np.full(len(i), m.role)), ids.append(i)
        fam += [m.name] * len(i)
    for m in scene.outliers:
        X, i = draw(m, counts.test_per_family)
        Xs.append(X), ys.append(np.full(len(i), OUTLIER)), ids.append(i)
        fam += [m.name] * len(i)
    test = Dataset(np.vstack(Xs), np.concatenate(ys), K, np.concatenate(ids))

    return ExperimentSplit(labeled, unlabeled, unlabeled_truth, test, np.array(fam), int(seed), counts)


def save_scene(path: str | os.PathLike, scene: Scene) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(scene.to_json())


def load_scene(path: str | os.PathLike) -> Scene:
    with open(path, encoding="utf-8") as fh:
        return Scene.from_json(fh.read())
