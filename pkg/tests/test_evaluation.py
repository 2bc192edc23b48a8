import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from somgan import evaluation as ev


def test_decide_boundaries():
    s = np.array([0.0, 0.3, 0.99, 1.0])
    assert np.all(ev.decide(s, 0.0, np.zeros(4)) == ev.OUTLIER_VERDICT)
    assert np.all(ev.decide(s, 1.01, np.array([0, 1, 0, 1])) == [0, 1, 0, 1])
    assert ev.decide(np.array([0.3]), 0.3, np.array([1]))[0] == ev.OUTLIER_VERDICT


def test_decide_callable_only_sees_survivors():
    seen = []

    def cls(idx):
        seen.append(idx)
        return np.ones(len(idx), dtype=int)

    out = ev.decide(np.array([0.9, 0.1, 0.2]), 0.5, cls)
    np.testing.assert_array_equal(seen[0], [1, 2])
    np.testing.assert_array_equal(out, [-1, 1, 1])


def test_roc_separated():
    r = ev.roc([0.1, 0.2, 0.3], [0.7, 0.8])
    assert r.auc == 1.0
    assert (r.false_alarm[0], r.detection[0]) == (0.0, 0.0)
    assert (r.false_alarm[-1], r.detection[-1]) == (1.0, 1.0)


def test_roc_identical_sets():
    s = [0.2, 0.5, 0.5, 0.9]
    assert ev.roc(s, s).auc == 0.5


def test_roc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_in, n_out = rng.integers(1, 60, size=2)
        # coarse rounding forces plenty of ties
        a = np.round(rng.random(n_in), int(rng.integers(1, 4)))
        b = np.round(rng.random(n_out) * rng.uniform(0.5, 1.5), int(rng.integers(1, 4)))
        assert abs(ev.roc(a, b).auc - ev.pairwise_auc(a, b)) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.lists(st.floats(0, 1), min_size=1, max_size=40))
def test_roc_monotone(a, b):
    r = ev.roc(a, b)
    assert np.all(np.diff(r.false_alarm) >= 0) and np.all(np.diff(r.detection) >= 0)
    assert 0.0 <= r.auc <= 1.0


def test_roc_needs_both_sets():
    with pytest.raises(ValueError):
        ev.roc([], [0.5])


def test_reliability_nothing_available():
    assert ev.reliability([-1, -1], [0, 1]) == (0.0, 0, 0)


def test_reliability_all_correct():
    assert ev.reliability([0, 1, 1], [0, 1, 1])[0] == 1.0


def test_reliability_two_of_three():
    acc, n_a, n_c = ev.reliability([0, 1, 1, -1], [0, 0, 1, 1])
    assert (n_a, n_c) == (3, 2) and acc == 2 / 3


def test_reliability_curve_matches_pointwise():
    rng = np.random.default_rng(1)
    s = np.round(rng.random(50), 1)
    pred = rng.integers(2, size=50)
    true = rng.integers(2, size=50)
    c = ev.reliability_curve(s, pred, true)
    for tau, acc, fa in zip(c.thresholds, c.accuracy, c.false_alarm):
        d = ev.decide(s, tau, pred)
        assert acc == ev.reliability(d, true)[0]
        assert fa == np.mean(s >= tau)


def test_threshold_q_one_is_min():
    s = np.array([0.4, 0.2, 0.9])
    assert ev.threshold_for_outlier_rejection(s, 1.0) == 0.2


def test_threshold_counting_example():
    s = np.linspace(0.1, 1.0, 10)
    tau = ev.threshold_for_outlier_rejection(s, 0.9)
    assert tau == pytest.approx(0.2)
    assert np.sum(s >= tau) == 9


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(0.01, 1.0))
def test_threshold_meets_rejection(s, q):
    s = np.array(s)
    tau = ev.threshold_for_outlier_rejection(s, q)
    assert np.mean(s >= tau) >= q - 1e-12
    assert tau in s


def test_step_interpolation():
    x = np.array([0.0, 0.0, 0.5, 1.0])
    y = np.array([0.0, 0.4, 0.8, 1.0])
    np.testing.assert_array_equal(ev.step_interpolate(x, y, [0.0, 0.25, 0.5, 0.99, 1.0]),
                                  [0.4, 0.4, 0.8, 0.8, 1.0])


def test_top_rate():
    assert ev.top_rate([0.0, 0.04, 0.06], [0.5, 0.9, 1.0]) == 0.9


def curve(auc_shift, rng):
    s_in = rng.random(30)
    s_out = rng.random(30) + auc_shift
    return ev.evaluate_scores(np.concatenate([s_in, s_out]), np.zeros(60, dtype=int),
                              np.concatenate([rng.integers(2, size=30), -np.ones(30, dtype=int)]))


def test_identical_trials_have_zero_width():
    r, rel = curve(0.3, np.random.default_rng(2))
    s = ev.summarize_trials([r] * 4, [rel] * 4)
    assert s.auc_ci[0] == s.auc_ci[1] == s.auc_mean
    np.testing.assert_array_equal(s.detection_lo, s.detection_hi)


def test_two_trial_t_interval():
    mean, lo, hi = ev.mean_ci(np.array([0.4, 0.6]))
    assert mean == pytest.approx(0.5)
    # t(0.975, 1) = 12.7062..., sd = 0.1414..., half-width = 12.706 * 0.1
    assert hi - mean == pytest.approx(1.2706, abs=1e-4)


def test_summary_clamps_for_reporting():
    rng = np.random.default_rng(3)
    rs = [curve(0.0, rng), curve(0.8, rng)]
    s = ev.summarize_trials([r for r, _ in rs], [q for _, q in rs])
    d = s.to_dict()
    assert 0.0 <= d["auc_ci"][0] <= d["auc_ci"][1] <= 1.0
    assert d["auc_ci_raw"][1] > 1.0


def test_bands_contain_mean():
    rng = np.random.default_rng(4)
    rs = [curve(rng.uniform(0, 0.5), rng) for _ in range(5)]
    s = ev.summarize_trials([r for r, _ in rs], [q for _, q in rs])
    assert np.all(s.detection_lo <= s.detection_mean) and np.all(s.detection_mean <= s.detection_hi)
    assert np.all(s.accuracy_lo <= s.accuracy_mean) and np.all(s.accuracy_mean <= s.accuracy_hi)


def test_summary_needs_two_trials():
    r, rel = curve(0.3, np.random.default_rng(5))
    with pytest.raises(ValueError):
        ev.summarize_trials([r], [rel])


def test_writers(tmp_path):
    rng = np.random.default_rng(6)
    rs = [curve(0.2, rng) for _ in range(3)]
    s = ev.summarize_trials([r for r, _ in rs], [q for _, q in rs])
    ev.save_roc_csv(tmp_path / "roc.csv", rs[0][0])
    ev.save_mean_roc_csv(tmp_path / "mroc.csv", s)
    ev.save_reliability_csv(tmp_path / "rel.csv", s)
    ev.save_summary_json(tmp_path / "s.json", {"m": s})
    assert (tmp_path / "roc.csv").read_text().startswith("fa_rate,detection_rate,threshold")
    assert len((tmp_path / "rel.csv").read_text().splitlines()) == len(ev.DEFAULT_GRID) + 1
    d = json.loads((tmp_path / "s.json").read_text())
    assert d["models"]["m"]["trials"] == 3
