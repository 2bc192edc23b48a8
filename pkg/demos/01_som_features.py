"""Why the SOM features help: inliers light up part of the map, outliers light up nothing.

Fits the map on the labeled inliers of one synthetic trial, then compares
Euclidean distance, D* and the resulting memberships for every material.
"""
import numpy as np

from somgan.config import RunConfig
from somgan.experiment import fit_som_features, trial_seeds
from somgan.som import bmu_euclidean
from somgan.synth import make_split

cfg = RunConfig()
split = make_split(cfg.scene, cfg.counts, trial_seeds(0, 0)["split"])
fmap, trace = fit_som_features(split, cfg.pipeline, trial_seeds(0, 0)["som"])
print(f"map {fmap.grid.rows}x{fmap.grid.cols}, sigmoid loss {trace[0]:.2f} -> {trace[-1]:.2f}")

X, fam = split.test.X, split.test_family
print(f"\n{'material':10s} {'min euclid':>10s} {'min D*':>8s} {'max memb':>9s}")
for name in dict.fromkeys(fam):
    Xm = X[fam == name]
    euclid = np.linalg.norm(Xm[:, None] - fmap.grid.weights[None], axis=2).min(axis=1)
    d = fmap.distances(Xm).min(axis=1)
    m = fmap(Xm).max(axis=1)
    print(f"{name:10s} {euclid.mean():10.3f} {d.mean():8.2f} {m.mean():9.3f}")

# Every test spectrum has a Euclidean BMU, outliers included. "dark" and
# "panel" land on nodes the inliers also use; only D* tells them apart.
for name in ("class0", "class1", "dark", "panel"):
    bmus = np.bincount(bmu_euclidean(fmap.grid, X[fam == name]), minlength=fmap.size)
    print(f"\nEuclidean BMU counts for {name}:\n{bmus.reshape(fmap.grid.rows, fmap.grid.cols)}")
