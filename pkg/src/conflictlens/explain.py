"""Shapley-value feature attribution on the model margin.

Margins are log-odds for logistic regression and boosting, and the
(mean) leaf probability for single trees and forests.  Three routes are
provided: exhaustive enumeration for small feature counts (the reference),
the polynomial-time path-dependent algorithm for trees, and the closed form
for linear margins.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, EmptyBackground, MissingCover, TooManyFeatures
from .logit import FittedLogit
from .trees import BoostedEnsemble, DecisionTree, Forest, Tree

MAX_EXACT_FEATURES = 15


@dataclass(frozen=True)
class AttributionSet:
    """Per-instance Shapley values; ``base_value + values.sum(1)`` is the margin."""

    base_value: float
    values: np.ndarray
    feature_names: tuple[str, ...]
    data: np.ndarray
    scale: str = "margin"

    @property
    def n_instances(self) -> int:
        return self.values.shape[0]

    def totals(self) -> np.ndarray:
        return self.base_value + self.values.sum(axis=1)


def _margin_fn(model) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(model, "margin"):
        return model.margin
    if callable(model):
        return model
    raise TypeError("model must be callable or expose .margin")


def exact_shapley(value: Callable[[np.ndarray], float], n_features: int) -> tuple[float, np.ndarray]:
    """Shapley values of a cooperative game by full subset enumeration.

    ``value`` receives a boolean membership mask.  Returns ``(v(empty), phi)``.
    """
    if n_features > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"{n_features} features exceed the {MAX_EXACT_FEATURES}-feature limit")
    p = n_features
    masks = ((np.arange(2**p)[:, None] >> np.arange(p)) & 1).astype(bool)
    v = np.array([value(m) for m in masks])
    return _shapley_from_table(v, masks, p)


def _shapley_from_table(v, masks, p):
    sizes = masks.sum(axis=1)
    weight = np.array([math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) for s in range(p)])
    phi = np.zeros(p)
    ids = np.arange(2**p)
    for j in range(p):
        without = ids[~masks[:, j]]
        phi[j] = np.sum(weight[sizes[without]] * (v[without | (1 << j)] - v[without]))
    return float(v[0]), phi


def shap_exact(model, x, background, feature_names: Sequence[str] | None = None) -> AttributionSet:
    """Interventional Shapley values for one instance by enumeration.

    ``v(S)`` is the mean model margin over ``background`` rows after their
    features in ``S`` are overwritten with ``x``'s values.
    """
    x = np.asarray(x, float).ravel()
    bg = np.atleast_2d(np.asarray(background, float))
    if bg.shape[0] == 0:
        raise EmptyBackground("background must contain at least one row")
    if bg.shape[1] != x.size:
        raise DimensionMismatch("background and x disagree on feature count")
    p = x.size
    if p > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"{p} features exceed the {MAX_EXACT_FEATURES}-feature limit")
    f = _margin_fn(model)
    masks = ((np.arange(2**p)[:, None] >> np.arange(p)) & 1).astype(bool)
    v = np.empty(2**p)
    chunk = max(1, 200_000 // bg.shape[0])
    for start in range(0, 2**p, chunk):
        block = masks[start:start + chunk]
        rows = np.where(block[:, None, :], x[None, None, :], bg[None, :, :])
        out = np.asarray(f(rows.reshape(-1, p)), float).reshape(block.shape[0], bg.shape[0])
        v[start:start + chunk] = out.mean(axis=1)
    base, phi = _shapley_from_table(v, masks, p)
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(p))
    return AttributionSet(base, phi[None, :], names, x[None, :])


# --------------------------------------------------------------------------
# Trees


def tree_conditional_expectation(tree: Tree, x, mask) -> float:
    """Cover-weighted expectation of a tree output given only features in ``mask``.

    Splits on known features follow ``x``; other splits average both
    children weighted by their share of the parent cover.
    """
    x = np.asarray(x, float)

    def visit(node):
        f = tree.feature[node]
        if f < 0:
            return tree.value[node]
        left, right = tree.left[node], tree.right[node]
        if mask[f]:
            return visit(left if x[f] <= tree.threshold[node] else right)
        return (tree.cover[left] * visit(left) + tree.cover[right] * visit(right)) / tree.cover[node]

    return float(visit(0))


def _trees_and_scale(model):
    if isinstance(model, DecisionTree):
        return [model.tree], 1.0, 0.0
    if isinstance(model, Forest):
        return list(model.trees), 1.0 / len(model.trees), 0.0
    if isinstance(model, BoostedEnsemble):
        return list(model.trees), model.learning_rate, model.base_score
    if isinstance(model, Tree):
        return [model], 1.0, 0.0
    raise TypeError(f"unsupported tree model {type(model).__name__}")


def path_value_function(model, x) -> Callable[[np.ndarray], float]:
    """Path-dependent value function ``v(S)`` of a tree model at ``x`` (margin scale)."""
    trees, scale, offset = _trees_and_scale(model)
    return lambda mask: offset + scale * sum(tree_conditional_expectation(t, x, mask) for t in trees)


def _check_cover(tree: Tree):
    if tree.cover is None or tree.cover.size != tree.n_nodes or np.any(~(tree.cover > 0)):
        raise MissingCover("tree nodes need positive training cover")


def shap_tree(model, X, feature_names: Sequence[str] | None = None) -> AttributionSet:
    """Path-dependent tree Shapley values for every row of ``X``.

    Forest attributions average the per-tree values (the forest margin is
    the mean leaf probability); boosting attributions sum them scaled by the
    learning rate.  Local accuracy holds against ``model.margin``.
    """
    trees, scale, offset = _trees_and_scale(model)
    X = np.atleast_2d(np.asarray(X, float))
    n_features = getattr(model, "n_features", X.shape[1])
    if X.shape[1] != n_features:
        raise DimensionMismatch(f"expected {n_features} features, got {X.shape[1]}")
    X = np.ascontiguousarray(X)
    phi = np.zeros((X.shape[0], n_features))
    base = offset
    empty = np.zeros(n_features, bool)
    for t in trees:
        _check_cover(t)
        phi += scale * _kernels.tree_shap(
            t.left, t.right, t.feature, t.threshold, t.value, t.cover, X, t.depth, n_features
        )
        base += scale * tree_conditional_expectation(t, X[0] if len(X) else np.zeros(n_features), empty)
    names = feature_names or getattr(model, "columns", None) or tuple(f"x{j}" for j in range(n_features))
    return AttributionSet(float(base), phi, tuple(names), X.copy())


def shap_linear(model: FittedLogit, X, feature_means) -> AttributionSet:
    """Closed-form Shapley values of the logistic margin.

    ``phi_j = beta_j (x_j - mean_j)`` and ``base = beta_0 + beta . mean``.
    """
    X = np.atleast_2d(np.asarray(X, float))
    means = np.asarray(feature_means, float)
    beta = model.coefficients[1:]
    if X.shape[1] != beta.size or means.size != beta.size:
        raise DimensionMismatch(f"expected {beta.size} features")
    phi = (X - means) * beta
    base = float(model.coefficients[0] + beta @ means)
    return AttributionSet(base, phi, tuple(model.feature_names), X.copy())


def explain(model, X, feature_means=None) -> AttributionSet:
    """Dispatch to the linear or tree route depending on ``model``."""
    if isinstance(model, FittedLogit):
        X = np.atleast_2d(np.asarray(X, float))
        means = X.mean(axis=0) if feature_means is None else feature_means
        return shap_linear(model, X, means)
    return shap_tree(model, X)


# --------------------------------------------------------------------------
# Bee-swarm export


def _normalise(column: np.ndarray) -> np.ndarray:
    lo, hi = column.min(), column.max()
    if hi == lo:
        return np.full(column.shape, 0.5)
    return (column - lo) / (hi - lo)


def feature_order(attrs: AttributionSet) -> list[int]:
    """Feature indices by descending mean |phi|, ties by name."""
    importance = np.abs(attrs.values).mean(axis=0)
    return sorted(range(len(attrs.feature_names)), key=lambda j: (-importance[j], attrs.feature_names[j]))


def beeswarm_export(attrs: AttributionSet) -> list[dict]:
    """One row per (feature, instance) with the Shapley value and a [0, 1] colour value.

    The colour value maps the feature's minimum over the explained rows to 0
    ("low") and its maximum to 1 ("high"); constant features get 0.5.
    """
    rows = []
    for j in feature_order(attrs):
        colour = _normalise(attrs.data[:, j])
        name = attrs.feature_names[j]
        for i in range(attrs.n_instances):
            rows.append(
                {
                    "feature": name,
                    "instance_id": i,
                    "shap_value": float(attrs.values[i, j]),
                    "normalized_feature_value": float(colour[i]),
                }
            )
    return rows


BEESWARM_FIELDS = ("feature", "instance_id", "shap_value", "normalized_feature_value")


def write_beeswarm_csv(rows: list[dict], path, comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.DictWriter(fh, fieldnames=BEESWARM_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def write_beeswarm_json(attrs: AttributionSet, path, meta: dict | None = None) -> None:
    doc = {
        **(meta or {}),
        "scale": attrs.scale,
        "base_value": attrs.base_value,
        "feature_order": [attrs.feature_names[j] for j in feature_order(attrs)],
        "rows": beeswarm_export(attrs),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
