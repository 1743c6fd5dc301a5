"""ROC/AUC and normalised RMSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_auc(scores, labels) -> RocCurve:
    """ROC of occlusion scores where a *lower* score means more likely occluded.

    Scores are negated internally, so AUC > 0.5 means informative. The curve
    steps through every distinct score; AUC by the trapezoid rule (tied
    scores therefore earn half credit).
    """
    s = -np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores {s.shape} and labels {y.shape} differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    pos = int(y.sum())
    neg = y.size - pos
    if pos == 0 or neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], y.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    thr = np.r_[np.inf, -s[last]]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1])) * 0.5)
    return RocCurve(fpr, tpr, thr, auc)


def pair_count_auc(scores, labels) -> float:
    """O(n^2) concordant-pair statistic (ties count one half); test oracle."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    p, n = s[y], s[~y]
    if p.size == 0 or n.size == 0:
        raise ValueError("need both classes")
    # occluded (positive) samples should score lower
    d = n[None, :] - p[:, None]
    return float(((d > 0).sum() + 0.5 * (d == 0).sum()) / (p.size * n.size))


def nrmse(predicted, actual) -> float:
    """RMSE divided by the RMS of the actual values."""
    p = np.asarray(predicted, dtype=np.float64).ravel()
    a = np.asarray(actual, dtype=np.float64).ravel()
    if p.shape != a.shape or a.size == 0:
        raise ValueError("predicted and actual need equal, nonzero length")
    denom = np.sqrt(np.mean(a * a))
    if denom == 0.0:
        raise ZeroDivisionError("actual values are all zero")
    return float(np.sqrt(np.mean((p - a) ** 2)) / denom)
