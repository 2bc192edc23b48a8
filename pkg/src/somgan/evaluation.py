"""Reject-then-classify evaluation: ROC, reliability and cross-trial summaries.

Detection convention: a sample is flagged as an outlier when its outlier
score is ``>= tau``. Detection rate is the fraction of true outliers flagged,
false-alarm rate the fraction of true inliers flagged.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import stats

OUTLIER_VERDICT = -1


def decide(scores, tau, classes) -> np.ndarray:
    """Outlier (``-1``) where ``score >= tau``, else the supplied inlier class.

    ``classes`` is an array of inlier-class predictions or a callable
    returning them for the given indices.
    """
    scores = np.asarray(scores, dtype=np.float64)
    flagged = scores >= tau
    if callable(classes):
        cls = np.asarray(classes(np.flatnonzero(~flagged)))
        out = np.full(scores.shape, OUTLIER_VERDICT, dtype=np.int64)
        out[~flagged] = cls
        return out
    return np.where(flagged, OUTLIER_VERDICT, np.asarray(classes)).astype(np.int64)


@dataclass(frozen=True)
class RocCurve:
    false_alarm: np.ndarray
    detection: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc(inlier_scores, outlier_scores) -> RocCurve:
    """Sweep tau over every distinct score, from +inf down to the minimum.

    The first point is (0, 0) at tau = +inf and the last is (1, 1) at the
    smallest observed score. AUC is the trapezoid area, which equals the
    probability an outlier outscores an inlier with ties counted as one half.
    """
    s_in = np.asarray(inlier_scores, dtype=np.float64).ravel()
    s_out = np.asarray(outlier_scores, dtype=np.float64).ravel()
    if s_in.size == 0 or s_out.size == 0:
        raise ValueError("ROC needs both inlier and outlier scores")
    taus = np.unique(np.concatenate([s_in, s_out]))[::-1]
    s_in_sorted = np.sort(s_in)
    s_out_sorted = np.sort(s_out)
    fa = (s_in.size - np.searchsorted(s_in_sorted, taus, side="left")) / s_in.size
    det = (s_out.size - np.searchsorted(s_out_sorted, taus, side="left")) / s_out.size
    fa = np.concatenate([[0.0], fa])
    det = np.concatenate([[0.0], det])
    taus = np.concatenate([[np.inf], taus])
    auc = float(np.sum(np.diff(fa) * (det[1:] + det[:-1]) / 2.0))
    return RocCurve(fa, det, taus, auc)


def pairwise_auc(inlier_scores, outlier_scores) -> float:
    """P(outlier score > inlier score) + 0.5 P(tie), by brute force."""
    a = np.asarray(inlier_scores, dtype=np.float64).ravel()
    b = np.asarray(outlier_scores, dtype=np.float64).ravel()
    gt = (b[:, None] > a[None, :]).sum()
    eq = (b[:, None] == a[None, :]).sum()
    return float((gt + 0.5 * eq) / (a.size * b.size))


def reliability(decisions, true_classes):
    """Accuracy over inliers that survived rejection; 0 when none survived.

    Returns ``(acc, n_available, n_correct)``.
    """
    d = np.asarray(decisions)
    t = np.asarray(true_classes)
    passed = d != OUTLIER_VERDICT
    n_a = int(passed.sum())
    n_c = int((d[passed] == t[passed]).sum())
    return (n_c / n_a if n_a >= 1 else 0.0), n_a, n_c


@dataclass(frozen=True)
class ReliabilityCurve:
    false_alarm: np.ndarray
    accuracy: np.ndarray
    n_available: np.ndarray
    n_correct: np.ndarray
    thresholds: np.ndarray


def reliability_curve(inlier_scores, inlier_pred, inlier_true, thresholds=None) -> ReliabilityCurve:
    """Reliability at each threshold of the ROC sweep (or the ones given)."""
    s = np.asarray(inlier_scores, dtype=np.float64)
    pred = np.asarray(inlier_pred)
    true = np.asarray(inlier_true)
    if thresholds is None:
        thresholds = np.concatenate([[np.inf], np.unique(s)[::-1]])
    thresholds = np.asarray(thresholds, dtype=np.float64)
    # inliers sorted by descending score; at tau the flagged ones are a prefix
    order = np.argsort(-s, kind="stable")
    correct = (pred == true)[order]
    # number of inliers still available once the top-k are flagged
    cum_correct_tail = np.concatenate([np.cumsum(correct[::-1])[::-1], [0]])
    n = s.size
    k = n - np.searchsorted(np.sort(s), thresholds, side="left")
    n_a = n - k
    n_c = cum_correct_tail[k]
    acc = np.where(n_a >= 1, n_c / np.maximum(n_a, 1), 0.0)
    return ReliabilityCurve(k / n, acc, n_a, n_c, thresholds)


def threshold_for_outlier_rejection(outlier_scores, q=0.9) -> float:
    """Largest observed score tau with fraction(score >= tau) >= q."""
    s = np.sort(np.asarray(outlier_scores, dtype=np.float64).ravel())
    if s.size == 0:
        raise ValueError("need outlier scores")
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    # keep at least ceil(q*n) scores at or above tau (tolerant to float round-off in q*n)
    need = int(np.ceil(q * s.size - 1e-9))
    return float(s[s.size - need])


def majority_vote(decisions, n_classes: int) -> np.ndarray:
    """Most common decision per column of an ``(n_models, n_samples)`` array.

    Outlier counts as its own category. When the top count is shared, the
    Outlier verdict drops out of the tie and the lowest tied class index wins.
    """
    d = np.atleast_2d(np.asarray(decisions, dtype=np.int64))
    if np.any((d != OUTLIER_VERDICT) & ((d < 0) | (d >= n_classes))):
        raise ValueError("decisions must be class indices or the outlier verdict")
    # column 0 counts outlier votes, column k+1 counts class k
    counts = np.stack([(d == c).sum(axis=0) for c in range(-1, n_classes)], axis=1)
    top = counts.max(axis=1, keepdims=True)
    tied = counts == top
    n_tied = tied.sum(axis=1)
    first_class = np.argmax(tied[:, 1:], axis=1)
    return np.where(n_tied == 1, np.argmax(tied, axis=1) - 1, first_class).astype(np.int64)


def step_interpolate(x, y, grid):
    """Right-continuous step interpolation of the curve (x, y) onto ``grid``.

    At each grid point the value is taken from the last curve point with
    ``x <= grid``; where several points share an x, the last one wins.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    idx = np.searchsorted(x, np.asarray(grid, dtype=np.float64), side="right") - 1
    return y[np.clip(idx, 0, len(y) - 1)]


def top_rate(fa, acc, max_fa=0.05):
    """Best reliability attained at false-alarm rates in [0, max_fa]."""
    fa = np.asarray(fa)
    acc = np.asarray(acc)
    m = fa <= max_fa + 1e-12
    return float(acc[m].max()) if np.any(m) else 0.0


def mean_ci(values, confidence=0.95):
    """Mean and t-based two-sided confidence interval along axis 0."""
    v = np.asarray(values, dtype=np.float64)
    n = v.shape[0]
    if n < 2:
        raise ValueError("confidence intervals need at least two trials")
    mean = v.mean(axis=0)
    sd = v.std(axis=0, ddof=1)
    half = stats.t.ppf(0.5 + confidence / 2.0, n - 1) * sd / np.sqrt(n)
    return mean, mean - half, mean + half


@dataclass(frozen=True)
class TrialSummary:
    grid: np.ndarray
    detection_mean: np.ndarray
    detection_lo: np.ndarray
    detection_hi: np.ndarray
    accuracy_mean: np.ndarray
    accuracy_lo: np.ndarray
    accuracy_hi: np.ndarray
    aucs: np.ndarray
    auc_mean: float
    auc_ci: tuple
    top_rates: np.ndarray
    top_rate_mean: float
    top_rate_ci: tuple

    def to_dict(self, clamp=True) -> dict:
        c = (lambda v: float(min(max(v, 0.0), 1.0))) if clamp else float
        return {
            "trials": int(self.aucs.size),
            "auc_mean": float(self.auc_mean),
            "auc_ci": [c(self.auc_ci[0]), c(self.auc_ci[1])],
            "auc_ci_raw": [float(self.auc_ci[0]), float(self.auc_ci[1])],
            "top_rate_mean": float(self.top_rate_mean),
            "top_rate_ci": [c(self.top_rate_ci[0]), c(self.top_rate_ci[1])],
            "top_rate_ci_raw": [float(self.top_rate_ci[0]), float(self.top_rate_ci[1])],
            "aucs": [float(a) for a in self.aucs],
            "top_rates": [float(a) for a in self.top_rates],
        }


DEFAULT_GRID = np.linspace(0.0, 1.0, 201)


def summarize_trials(rocs, rels, grid=DEFAULT_GRID, confidence=0.95, max_fa=0.05) -> TrialSummary:
    """Vertical averaging of per-trial curves plus AUC / top-rate CIs."""
    if len(rocs) < 2 or len(rocs) != len(rels):
        raise ValueError("summaries need at least two trials with one ROC and one reliability curve each")
    grid = np.asarray(grid, dtype=np.float64)
    det = np.stack([step_interpolate(r.false_alarm, r.detection, grid) for r in rocs])
    acc = np.stack([step_interpolate(r.false_alarm, r.accuracy, grid) for r in rels])
    dm, dlo, dhi = mean_ci(det, confidence)
    am, alo, ahi = mean_ci(acc, confidence)
    aucs = np.array([r.auc for r in rocs])
    tops = np.array([top_rate(r.false_alarm, r.accuracy, max_fa) for r in rels])
    au_m, au_lo, au_hi = mean_ci(aucs, confidence)
    t_m, t_lo, t_hi = mean_ci(tops, confidence)
    return TrialSummary(grid, dm, dlo, dhi, am, alo, ahi, aucs, float(au_m), (float(au_lo), float(au_hi)),
                        tops, float(t_m), (float(t_lo), float(t_hi)))


def evaluate_scores(scores, pred, labels):
    """ROC and reliability curve for one trial's test set.

    ``labels`` are class indices for inliers and negative codes for outliers.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    inl = labels >= 0
    r = roc(scores[inl], scores[~inl])
    rel = reliability_curve(scores[inl], np.asarray(pred)[inl], labels[inl], r.thresholds)
    return r, rel


def save_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fa_rate", "detection_rate", "threshold"])
        for f, d, t in zip(curve.false_alarm, curve.detection, curve.thresholds):
            w.writerow([repr(float(f)), repr(float(d)), repr(float(t))])


def save_reliability_csv(path, summary: TrialSummary) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fa_rate", "acc_mean", "acc_lo", "acc_hi"])
        for row in zip(summary.grid, summary.accuracy_mean, summary.accuracy_lo, summary.accuracy_hi):
            w.writerow([repr(float(v)) for v in row])


def save_mean_roc_csv(path, summary: TrialSummary) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fa_rate", "detection_mean", "detection_lo", "detection_hi"])
        for row in zip(summary.grid, summary.detection_mean, summary.detection_lo, summary.detection_hi):
            w.writerow([repr(float(v)) for v in row])


def save_summary_json(path, summaries: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"models": {k: s.to_dict() for k, s in summaries.items()}}, fh, indent=2, sort_keys=True)
