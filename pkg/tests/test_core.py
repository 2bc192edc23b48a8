import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from somgan.core import (OUTLIER, STD_FLOOR, UNLABELED, DataError, Dataset, DimensionError,
                         Standardizer, as_spectrum, concat, fit_standardizer, format_label,
                         load_csv, parse_label, save_csv, standardize)


def write(path, text):
    path.write_text(text)
    return path


def test_load_three_rows(tmp_path):
    p = write(tmp_path / "d.csv", "b0,b1,b2,b3,label\n"
                                  "1,2,3,4,0\n5,6,7,8,outlier\n0.5,0.5,0.5,0.5,unlabeled\n")
    d = load_csv(p)
    assert len(d) == 3 and d.band_count == 4
    assert list(d.y) == [0, OUTLIER, UNLABELED]
    np.testing.assert_array_equal(d.X[1], [5, 6, 7, 8])


def test_load_empty_file_raises(tmp_path):
    with pytest.raises(DataError):
        load_csv(write(tmp_path / "e.csv", ""))


def test_load_short_row_names_the_row(tmp_path):
    p = write(tmp_path / "s.csv", "b0,b1,b2,b3,label\n1,2,3,4,0\n1,2,3,1\n")
    with pytest.raises(DimensionError, match="row 1"):
        load_csv(p)


def test_load_rejects_unknown_label(tmp_path):
    p = write(tmp_path / "u.csv", "b0,label\n1,grass\n")
    with pytest.raises(DataError):
        load_csv(p)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    d = Dataset(rng.random((6, 5)), [0, 1, OUTLIER, UNLABELED, 1, 0], 2)
    save_csv(tmp_path / "r.csv", d)
    back = load_csv(tmp_path / "r.csv", class_count=2)
    np.testing.assert_array_equal(back.X, d.X)
    np.testing.assert_array_equal(back.y, d.y)


def test_label_codes():
    assert parse_label(" Outlier ") == OUTLIER
    assert format_label(UNLABELED) == "unlabeled"
    assert parse_label(format_label(3)) == 3
    with pytest.raises(DataError):
        parse_label("2", class_count=2)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.ones((2, 3)), [0, 5], 2)
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan, 1.0]]), [0], 2)
    with pytest.raises(DimensionError):
        Dataset(np.ones((2, 3)), [0], 2)
    d = Dataset(np.ones((2, 3)), [0, OUTLIER], 2)
    with pytest.raises(ValueError):
        d.X[0, 0] = 2.0


def test_subset_and_concat():
    d = Dataset(np.arange(12.0).reshape(4, 3), [0, OUTLIER, 1, UNLABELED], 2, ids=[10, 11, 12, 13])
    inl = d.inliers()
    assert list(inl.ids) == [10, 12]
    both = concat([inl, d.subset(d.y < 0)])
    assert len(both) == 4 and sorted(both.ids) == [10, 11, 12, 13]


def test_as_spectrum():
    with pytest.raises(DataError):
        as_spectrum([0.0, 0.0], nonzero=True)
    with pytest.raises(DimensionError):
        as_spectrum(np.ones((2, 2)))


def test_constant_band_gets_floor():
    z = fit_standardizer(np.array([[1.0, 3.0], [2.0, 3.0], [4.0, 3.0]]))
    assert z.std[1] == STD_FLOOR


def test_single_sample():
    z = fit_standardizer(np.array([[1.0, -2.0, 5.0]]))
    np.testing.assert_array_equal(z.mean, [1.0, -2.0, 5.0])
    np.testing.assert_array_equal(z.std, [STD_FLOOR] * 3)


def test_two_samples_population_std():
    z = fit_standardizer(np.array([[0.0, 0.0], [2.0, 2.0]]))
    np.testing.assert_array_equal(z.mean, [1.0, 1.0])
    np.testing.assert_array_equal(z.std, [1.0, 1.0])


def test_fit_on_label_subset():
    d = Dataset(np.array([[0.0], [2.0], [100.0]]), [0, 1, OUTLIER], 2)
    z = fit_standardizer(d, subset=lambda y: y >= 0)
    assert z.mean[0] == 1.0


def test_standardize_mean_is_zero():
    z = Standardizer(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    np.testing.assert_array_equal(standardize(z.mean, z), [0.0, 0.0])


def test_identity_standardizer():
    s = np.array([0.3, -1.0, 7.0])
    np.testing.assert_array_equal(standardize(s, Standardizer.identity(3)), s)


def test_standardize_wrong_width():
    with pytest.raises(DimensionError):
        standardize(np.ones(3), Standardizer.identity(4))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 20), st.integers(1, 6)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_standardized_moments(X):
    z = fit_standardizer(X)
    Y = z.transform(X)
    # bands whose spread is tiny next to their magnitude lose digits to cancellation
    live = X.std(axis=0) > 1e-3 * np.maximum(1.0, np.abs(X).max(axis=0))
    assert np.all(np.abs(Y[:, live].mean(axis=0)) < 1e-8)
    np.testing.assert_allclose(Y[:, live].std(axis=0), 1.0, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 10), st.integers(1, 6)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_round_trip(X):
    z = fit_standardizer(X)
    np.testing.assert_allclose(z.inverse(z.transform(X)), X, atol=1e-10, rtol=0)
