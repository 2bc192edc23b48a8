import numpy as np
import pytest

from somgan.core import OUTLIER, UNLABELED
from somgan.som import spectral_angle
from somgan.synth import (DEFAULT_FAMILIES, MaterialModel, SplitCounts, default_scene, load_scene,
                          make_split, sample_material, save_scene)


def bump_model(**kw):
    return MaterialModel("m", 0, ((0.3, 0.1, 0.5), (0.7, 0.2, 0.2)), offset=0.05, **kw)


def test_noiseless_unit_illumination_copies_base():
    m = bump_model(illum=(1.0, 1.0), noise=0.0)
    X = sample_material(m, 5, 0, 16)
    np.testing.assert_array_equal(X, np.tile(m.base(16), (5, 1)))


def test_noiseless_samples_share_direction():
    m = bump_model(illum=(0.5, 2.0), noise=0.0)
    X = sample_material(m, 20, 1, 16)
    assert np.all(spectral_angle(X, m.base(16)) < 1e-7)


def test_monte_carlo_mean():
    m = bump_model(illum=(0.7, 1.3), noise=0.01)
    X = sample_material(m, 10_000, 2, 16)
    err = np.abs(X.mean(axis=0) - m.base(16))
    # the illumination spread adds its own sampling error on top of the noise term
    u_sd = (1.3 - 0.7) / np.sqrt(12)
    bound = 3 * np.sqrt(0.01 ** 2 + (u_sd * m.base(16)) ** 2) / 100
    assert np.all(err < bound)
    assert np.all(X >= 0)


def test_sampling_is_deterministic():
    m = bump_model()
    np.testing.assert_array_equal(sample_material(m, 4, 9, 8), sample_material(m, 4, 9, 8))


def test_material_validation():
    with pytest.raises(ValueError):
        bump_model(illum=(0.0, 1.0))
    with pytest.raises(ValueError):
        MaterialModel("neg", "x", (), offset=-0.5).base(4)


def test_scene_model_count():
    assert len(default_scene().materials) == 2 + len(DEFAULT_FAMILIES)
    assert len(default_scene(classes=3, families=("dark", "soil")).materials) == 5


def test_dark_is_euclidean_confusable():
    sc = default_scene()
    B = sc.bands
    inl = [m.base(B) for m in sc.inliers]
    dark = sc.material("dark").base(B)
    nearest = min(np.linalg.norm(dark - b) for b in inl)
    between = np.mean([np.linalg.norm(a - b) for i, a in enumerate(inl) for b in inl[i + 1:]])
    assert nearest < between


def test_panel_is_angle_confusable():
    sc = default_scene()
    B = sc.bands
    assert spectral_angle(sc.material("panel").base(B), sc.inliers[0].base(B)) < 1e-7


def test_inlier_classes_are_separable_in_angle():
    sc = default_scene()
    a, b = (m.base(sc.bands) for m in sc.inliers)
    assert spectral_angle(a, b) > 0.05


def test_scene_needs_two_classes():
    with pytest.raises(ValueError):
        default_scene(classes=1)


def test_default_counts():
    sp = make_split(default_scene(), seed=0)
    K = 2
    assert np.sum(sp.labeled.y >= 0) == 10 * K
    assert np.sum(sp.labeled.y == OUTLIER) == 10
    assert len(sp.unlabeled) == 500 * K + 3500
    assert np.all(sp.unlabeled.y == UNLABELED)
    assert np.sum(sp.unlabeled_truth == OUTLIER) == 3500


def test_labeled_outliers_from_one_family_test_from_all():
    sc = default_scene()
    sp = make_split(sc, SplitCounts(unlabeled_per_class=20, unlabeled_outliers=40), seed=1)
    panel = sc.material("panel")
    X = sp.labeled.X[sp.labeled.y == OUTLIER]
    assert np.all(spectral_angle(X, panel.base(sc.bands)) < 0.2)
    assert set(sp.test_family[sp.test.y == OUTLIER]) == set(DEFAULT_FAMILIES)


def test_split_determinism_and_disjointness():
    sc = default_scene()
    c = SplitCounts(unlabeled_per_class=30, unlabeled_outliers=50)
    a, b = make_split(sc, c, 5), make_split(sc, c, 5)
    np.testing.assert_array_equal(a.unlabeled.X, b.unlabeled.X)
    np.testing.assert_array_equal(a.test.X, b.test.X)
    ids = np.concatenate([a.labeled.ids, a.unlabeled.ids, a.test.ids])
    assert len(np.unique(ids)) == len(ids)


def test_spectra_are_valid():
    sp = make_split(default_scene(), SplitCounts(unlabeled_per_class=30, unlabeled_outliers=50), 2)
    for d in (sp.labeled, sp.unlabeled, sp.test):
        assert np.all(np.isfinite(d.X)) and np.all(np.linalg.norm(d.X, axis=1) > 0)


def test_scene_round_trip(tmp_path):
    sc = default_scene()
    save_scene(tmp_path / "scene.json", sc)
    assert load_scene(tmp_path / "scene.json") == sc
