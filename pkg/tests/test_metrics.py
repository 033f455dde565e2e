from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conflictlens import metrics
from conflictlens.errors import LengthMismatch, NoPositives, SingleClass

Y5 = np.array([1, 1, 0, 0, 0])
P5 = np.array([0.6, 0.4, 0.55, 0.2, 0.1])


def brute_force_ap(y, p):
    """Step-wise AP by enumerating each distinct cut, in exact arithmetic."""
    n_pos = sum(y)
    ap, prev_recall = Fraction(0), Fraction(0)
    for t in sorted(set(p), reverse=True):
        pred = [s >= t for s in p]
        tp = sum(1 for a, b in zip(pred, y) if a and b)
        fp = sum(1 for a, b in zip(pred, y) if a and not b)
        recall = Fraction(tp, n_pos)
        ap += (recall - prev_recall) * Fraction(tp, tp + fp)
        prev_recall = recall
    return ap


def labelled_scores(max_n=50):
    return st.integers(2, max_n).flatmap(
        lambda n: st.tuples(
            st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda y: 0 < sum(y) < n),
            st.lists(st.integers(0, 6).map(lambda k: k / 6), min_size=n, max_size=n),
        )
    )


# Confusion and PRF --------------------------------------------------------


def test_confusion_examples():
    assert metrics.confusion([1, 0], [0.9, 0.1]) == metrics.ConfusionMatrix(1, 0, 0, 1)
    cm = metrics.confusion(Y5, P5, 0.0)
    assert cm.tn == cm.fn == 0
    assert metrics.confusion(Y5, P5, 0.5) == metrics.ConfusionMatrix(tp=1, fp=1, fn=1, tn=2)


def test_five_point_fixture_exact():
    cm = metrics.confusion(Y5, P5, 0.5)
    s = metrics.prf(cm)
    assert cm.accuracy == 3 / 5
    assert cm.accuracy == 1 - (cm.fp + cm.fn) / cm.total
    assert (s.positive.precision, s.positive.recall) == (1 / 2, 1 / 2)
    assert (s.negative.precision, s.negative.recall) == (2 / 3, 2 / 3)


def test_threshold_is_inclusive():
    assert metrics.confusion([1], [0.5], 0.5).tp == 1


def test_prf_examples():
    perfect = metrics.prf(metrics.ConfusionMatrix(3, 0, 0, 4))
    assert perfect.macro_f1 == 1.0
    empty = metrics.prf(metrics.ConfusionMatrix(0, 0, 5, 3)).positive
    assert (empty.precision, empty.recall, empty.f1) == (0.0, 0.0, 0.0)
    s = metrics.prf(metrics.ConfusionMatrix(2, 1, 2, 0)).positive
    assert s.precision == pytest.approx(2 / 3) and s.recall == 0.5
    assert s.f1 == pytest.approx(4 / 7)


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        metrics.confusion([1, 0], [0.5])


# Curves -------------------------------------------------------------------


def test_roc_examples():
    assert metrics.roc_curve([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]).auc == 1.0
    assert metrics.roc_curve([0, 1, 0, 1], [0.3] * 4).auc == 0.5
    c = metrics.roc_curve(Y5, P5)
    assert (c.x[0], c.y[0], c.x[-1], c.y[-1]) == (0, 0, 1, 1)
    assert np.all(np.diff(c.x) >= 0) and np.all(np.diff(c.y) >= 0)


def test_roc_single_class():
    with pytest.raises(SingleClass):
        metrics.roc_curve([1, 1], [0.2, 0.3])


def test_pr_no_positives():
    with pytest.raises(NoPositives):
        metrics.pr_curve([0, 0], [0.2, 0.3])


@settings(max_examples=200, deadline=None)
@given(labelled_scores())
def test_roc_auc_equals_mann_whitney(data):
    y, p = map(np.array, data)
    assert abs(metrics.roc_curve(y, p).auc - metrics.mann_whitney_auc(y, p)) < 1e-12


def test_five_point_average_precision():
    assert metrics.average_precision(Y5, P5) == pytest.approx(float(brute_force_ap(Y5.tolist(), P5.tolist())), abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(labelled_scores(30))
def test_average_precision_matches_enumeration(data):
    y, p = data
    assert metrics.average_precision(np.array(y), np.array(p)) == pytest.approx(float(brute_force_ap(y, p)), abs=1e-12)


def test_perfect_average_precision():
    assert metrics.average_precision([0, 1, 1], [0.1, 0.8, 0.9]) == 1.0


@pytest.mark.parametrize("n,n_pos", [(1470, 89), (200, 13), (33, 2)])
def test_constant_scorer_ap_is_prevalence(n, n_pos):
    y = np.r_[np.ones(n_pos), np.zeros(n - n_pos)]
    assert abs(metrics.average_precision(y, np.full(n, 0.3)) - n_pos / n) < 1e-12


def test_roc_invariant_to_monotone_transform(rng):
    y = rng.integers(0, 2, 100)
    p = rng.uniform(size=100)
    assert metrics.roc_curve(y, p).auc == pytest.approx(metrics.roc_curve(y, np.exp(3 * p) - 7).auc, abs=1e-15)


def test_row_order_invariance(rng):
    y = rng.integers(0, 2, 60)
    p = np.round(rng.uniform(size=60), 1)
    perm = rng.permutation(60)
    assert metrics.roc_curve(y, p).auc == metrics.roc_curve(y[perm], p[perm]).auc
    assert metrics.average_precision(y, p) == pytest.approx(metrics.average_precision(y[perm], p[perm]), abs=1e-15)


def test_macro_roc_classes_agree(rng):
    y = rng.integers(0, 2, 80)
    p = rng.uniform(size=80)
    r = metrics.roc_report(y, p)
    assert r.positive.auc == pytest.approx(r.negative.auc, abs=1e-12)


# Threshold sweep ----------------------------------------------------------


def test_grid_contains_half():
    assert 0.5 in metrics.threshold_grid(0.01)
    assert 0.5 in metrics.threshold_grid(0.03)
    g = metrics.threshold_grid(0.01)
    assert g[0] == 0 and g[-1] == 1 and g.size == 101


def test_sweep_dominates_default(rng):
    for _ in range(20):
        y = rng.integers(0, 2, 50)
        if y.min() == y.max():
            continue
        p = rng.uniform(size=50) ** 3
        sweep = metrics.optimize_threshold(y, p)
        assert sweep.best_score >= metrics.macro_f1(y, p, 0.5)


def test_sweep_separable_reaches_one():
    sweep = metrics.optimize_threshold([0, 0, 1, 1], [0.1, 0.3, 0.7, 0.9])
    assert sweep.best_score == 1.0
    assert sweep.best_threshold == 0.31  # lowest of the tied optima


def test_macro_f1_symmetric_under_flip(rng):
    y = rng.integers(0, 2, 40)
    p = rng.uniform(size=40)
    # p >= t on flipped scores is 1 - p >= t, i.e. p <= 1 - t; use a cut between scores.
    t = 0.4321
    flipped = metrics.prf(metrics.confusion(1 - y, 1 - p, 1 - t))
    original = metrics.prf(metrics.confusion(y, p, t))
    assert flipped.macro_f1 == pytest.approx(original.macro_f1)


def test_evaluation_summary_layout():
    s = metrics.evaluation_summary(Y5, P5)
    default, best = s["thresholds"]
    assert default["threshold"] == 0.5
    assert best["macro_f1"] >= default["macro_f1"]
    assert [c["class"] for c in default["classes"]] == [0, 1]
    fixed = metrics.evaluation_summary(Y5, P5, threshold=0.3)
    assert fixed["thresholds"][1]["policy"] == "fixed" and fixed["thresholds"][1]["threshold"] == 0.3
