"""Confusion matrices, precision/recall/F1, ROC and PR curves, threshold sweeps.

The positive class (label 1) is the confirmed conflict.  A score ``p`` is
predicted positive iff ``p >= threshold``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NoPositives, SingleClass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.fp + self.tn

    @property
    def total(self) -> int:
        return self.positives + self.negatives

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    def flipped(self) -> ConfusionMatrix:
        """The same matrix seen with the negative class as positive."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


def _check(y, p):
    y = np.asarray(y)
    p = np.asarray(p, dtype=float)
    if y.shape != p.shape or y.ndim != 1:
        raise LengthMismatch(f"labels {y.shape} and scores {p.shape} differ")
    return (y == 1).astype(np.int64), p


def confusion(y, p, threshold: float = 0.5) -> ConfusionMatrix:
    y, p = _check(y, p)
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    pred = p >= threshold
    tp = int(np.count_nonzero(pred & (y == 1)))
    fp = int(np.count_nonzero(pred & (y == 0)))
    fn = int(np.count_nonzero(~pred & (y == 1)))
    tn = int(np.count_nonzero(~pred & (y == 0)))
    return ConfusionMatrix(tp, fp, fn, tn)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class PRF:
    positive: ClassScores
    negative: ClassScores

    @property
    def macro_f1(self) -> float:
        return 0.5 * (self.positive.f1 + self.negative.f1)

    def as_rows(self) -> list[dict]:
        return [
            {"class": 0, **self.negative.__dict__},
            {"class": 1, **self.positive.__dict__},
        ]


def _scores(cm: ConfusionMatrix) -> ClassScores:
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else 0.0
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassScores(precision, recall, f1, cm.tp + cm.fn)


def prf(cm: ConfusionMatrix) -> PRF:
    """Per-class precision, recall and F1 (harmonic mean); zero on empty denominators."""
    return PRF(positive=_scores(cm), negative=_scores(cm.flipped()))


def macro_f1(y, p, threshold: float = 0.5) -> float:
    return prf(confusion(y, p, threshold)).macro_f1


@dataclass(frozen=True)
class CurveResult:
    """Curve points ordered by decreasing threshold.

    For ROC, ``x`` is the false-positive rate and ``y`` the true-positive
    rate; for PR, ``x`` is recall and ``y`` precision.  ``thresholds[i]`` is
    the score cut producing point ``i`` (``inf`` marks the empty-prediction
    start point).
    """

    thresholds: np.ndarray
    x: np.ndarray
    y: np.ndarray
    auc: float


def _cumulative_counts(y, p):
    order = np.argsort(-p, kind="mergesort")
    ys, ps = y[order], p[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[ps[1:] != ps[:-1], True])
    tps = np.cumsum(ys)[ends]
    fps = (ends + 1) - tps
    return ps[ends], tps, fps


def roc_curve(y, p) -> CurveResult:
    """ROC points at every distinct score plus (0, 0) and (1, 1); trapezoid AUC."""
    y, p = _check(y, p)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both classes present")
    thr, tps, fps = _cumulative_counts(y, p)
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    if fpr[-1] != 1.0 or tpr[-1] != 1.0:
        tpr = np.r_[tpr, 1.0]
        fpr = np.r_[fpr, 1.0]
        thr = np.r_[thr, -np.inf]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return CurveResult(np.r_[np.inf, thr], fpr, tpr, auc)


def pr_curve(y, p) -> CurveResult:
    """Precision-recall points at every distinct score; AUC is average precision.

    ``AP = sum_k (R_k - R_{k-1}) P_k`` over thresholds in decreasing order.
    """
    y, p = _check(y, p)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("precision-recall needs at least one positive")
    thr, tps, fps = _cumulative_counts(y, p)
    precision = tps / (tps + fps)
    recall = tps / n_pos
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return CurveResult(
        np.r_[np.inf, thr], np.r_[0.0, recall], np.r_[1.0, precision], ap
    )


def average_precision(y, p) -> float:
    return pr_curve(y, p).auc


def flip(y, p):
    """Labels and scores seen from the negative class."""
    y, p = _check(y, p)
    return 1 - y, 1.0 - p


@dataclass(frozen=True)
class CurveSet:
    """Per-class curves with macro (unweighted mean) AUC."""

    positive: CurveResult
    negative: CurveResult

    @property
    def macro_auc(self) -> float:
        return 0.5 * (self.positive.auc + self.negative.auc)


def roc_report(y, p) -> CurveSet:
    return CurveSet(roc_curve(y, p), roc_curve(*flip(y, p)))


def pr_report(y, p) -> CurveSet:
    return CurveSet(pr_curve(y, p), pr_curve(*flip(y, p)))


@dataclass(frozen=True)
class ThresholdSweep:
    thresholds: np.ndarray
    macro_f1: np.ndarray

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.macro_f1))  # first maximum = lowest threshold

    @property
    def best_threshold(self) -> float:
        return float(self.thresholds[self.best_index])

    @property
    def best_score(self) -> float:
        return float(self.macro_f1[self.best_index])

    def score_at(self, threshold: float) -> float:
        i = int(np.argmin(np.abs(self.thresholds - threshold)))
        return float(self.macro_f1[i])


def threshold_grid(step: float = 0.01) -> np.ndarray:
    n = int(round(1 / step))
    grid = np.round(np.linspace(0.0, 1.0, n + 1), 12)
    if not np.any(grid == 0.5):
        grid = np.union1d(grid, [0.5])
    return grid


def optimize_threshold(y, p, grid_step: float = 0.01) -> ThresholdSweep:
    """Macro-F1 at every grid threshold in [0, 1]; the grid always contains 0.5."""
    y, p = _check(y, p)
    if y.min() == y.max():
        raise SingleClass("threshold optimisation needs both classes present")
    grid = threshold_grid(grid_step)
    scores = np.array([macro_f1(y, p, t) for t in grid])
    return ThresholdSweep(grid, scores)


def mann_whitney_auc(y, p) -> float:
    """Pairwise ROC AUC: P(score_pos > score_neg) + P(tie) / 2 (quadratic time)."""
    y, p = _check(y, p)
    pos, neg = p[y == 1], p[y == 0]
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def evaluation_summary(y, p, threshold: float | None = None, grid_step: float = 0.01) -> dict:
    """Two-threshold classification report plus ROC/PR AUCs.

    Rows at 0.50 and at the chosen threshold (the macro-F1 optimum when
    ``threshold`` is None) mirror the usual two-row layout.
    """
    sweep = optimize_threshold(y, p, grid_step)
    chosen = sweep.best_threshold if threshold is None else float(threshold)
    rows = []
    for label, t in (("default", 0.5), ("optimized" if threshold is None else "fixed", chosen)):
        cm = confusion(y, p, t)
        scores = prf(cm)
        rows.append(
            {
                "policy": label,
                "threshold": t,
                "confusion": {"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "tn": cm.tn},
                "accuracy": cm.accuracy,
                "classes": scores.as_rows(),
                "macro_f1": scores.macro_f1,
            }
        )
    roc = roc_report(y, p)
    pr = pr_report(y, p)
    return {
        "thresholds": rows,
        "roc_auc": {"class_1": roc.positive.auc, "class_0": roc.negative.auc, "macro": roc.macro_auc},
        "pr_auc": {"class_1": pr.positive.auc, "class_0": pr.negative.auc, "macro": pr.macro_auc},
        "sweep": {"best_threshold": sweep.best_threshold, "best_macro_f1": sweep.best_score},
    }
