"""CART classification trees, random forests and second-order gradient boosting.

All models emit probabilities.  Trees route ``x[feature] <= threshold`` to
the left child; thresholds are midpoints between adjacent observed values,
so one-hot indicators split at 0.5.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import DimensionMismatch, EmptyDataset, EmptyNode, SingleClass
from .events import EncodedMatrix


def gini(class_counts, weights=None) -> float:
    """Gini impurity ``sum_c p_c (1 - p_c)`` of (optionally weighted) class counts."""
    counts = np.asarray(class_counts, float)
    if weights is not None:
        counts = counts * np.asarray(weights, float)
    total = counts.sum()
    if total <= 0:
        raise EmptyNode("gini of an empty node")
    p = counts / total
    return float(np.sum(p * (1 - p)))


@dataclass
class Tree:
    """Array-backed binary tree.

    ``value`` holds the leaf output (positive-class proportion for CART,
    leaf weight for boosting) and ``cover`` the summed training row weight
    reaching each node.  ``class_weight`` is the weighted (negative,
    positive) mass per node for classification trees.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    n_samples: np.ndarray
    class_weight: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.is_leaf))

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        return _kernels.apply_tree(
            np.ascontiguousarray(X, dtype=float), self.feature, self.threshold, self.left, self.right
        )

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def expected_value(self) -> float:
        leaves = self.is_leaf
        return float(np.sum(self.cover[leaves] * self.value[leaves]) / np.sum(self.cover[leaves]))

    def to_dict(self) -> dict:
        out = {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
            "n_samples": self.n_samples.tolist(),
        }
        if self.class_weight is not None:
            out["class_weight"] = self.class_weight.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> Tree:
        return cls(
            feature=np.array(d["feature"], np.int64),
            threshold=np.array(d["threshold"], float),
            left=np.array(d["left"], np.int64),
            right=np.array(d["right"], np.int64),
            value=np.array(d["value"], float),
            cover=np.array(d["cover"], float),
            n_samples=np.array(d["n_samples"], np.int64),
            class_weight=None if "class_weight" not in d else np.array(d["class_weight"], float).reshape(-1, 2),
        )

    @classmethod
    def from_nodes(cls, nodes: list[dict]) -> Tree:
        """Flatten pre-order node records, dropping anything below a leaf."""
        keep: list[int] = []
        stack = [0]
        while stack:
            i = stack.pop()
            keep.append(i)
            if nodes[i].get("feature", -1) >= 0:
                stack.append(nodes[i]["right"])
                stack.append(nodes[i]["left"])
        new_id = {old: new for new, old in enumerate(keep)}
        m = len(keep)
        feature = np.full(m, -1, np.int64)
        threshold = np.zeros(m)
        left = np.full(m, -1, np.int64)
        right = np.full(m, -1, np.int64)
        value = np.zeros(m)
        cover = np.zeros(m)
        n_samples = np.zeros(m, np.int64)
        has_cw = "w0" in nodes[0]
        cw = np.zeros((m, 2)) if has_cw else None
        for new, old in enumerate(keep):
            nd = nodes[old]
            if nd.get("feature", -1) >= 0:
                feature[new] = nd["feature"]
                threshold[new] = nd["threshold"]
                left[new] = new_id[nd["left"]]
                right[new] = new_id[nd["right"]]
            value[new] = nd["value"]
            cover[new] = nd["cover"]
            n_samples[new] = nd["n"]
            if has_cw:
                cw[new] = (nd["w0"], nd["w1"])
        return cls(feature, threshold, left, right, value, cover, n_samples, cw)


def _check_X(X, n_features):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_features:
        raise DimensionMismatch(f"expected {n_features} features, got shape {np.shape(X)}")
    return np.ascontiguousarray(X)


# --------------------------------------------------------------------------
# CART


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_leaf: int = 1
    min_samples_split: int = 2
    ccp_alpha: float = 0.0

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        if self.min_samples_leaf < 1 or self.min_samples_split < 2:
            raise ValueError("min_samples_leaf >= 1 and min_samples_split >= 2 required")
        if self.ccp_alpha < 0:
            raise ValueError("ccp_alpha must be non-negative")


def _grow_cart(X, y, w, params: TreeParams, rng=None, max_features=None) -> list[dict]:
    n, p = X.shape
    w1 = w * y
    max_depth = math.inf if params.max_depth is None else params.max_depth
    all_cols = np.arange(p, dtype=np.int64)
    nodes: list[dict] = []

    def candidate_splits(idx):
        if rng is None or max_features is None or max_features >= p:
            return _kernels.best_gini_split(X, w, w1, idx, all_cols, params.min_samples_leaf)
        perm = rng.permutation(p)
        head = np.sort(perm[:max_features]).astype(np.int64)
        found = _kernels.best_gini_split(X, w, w1, idx, head, params.min_samples_leaf)
        if found[0] >= 0:
            return found
        # No admissible split among the drawn columns: keep looking.
        tail = np.sort(perm[max_features:]).astype(np.int64)
        return _kernels.best_gini_split(X, w, w1, idx, tail, params.min_samples_leaf)

    def build(idx, depth):
        node_id = len(nodes)
        W = float(w[idx].sum())
        W1 = float(w1[idx].sum())
        rec = {"n": int(idx.size), "cover": W, "w0": W - W1, "w1": W1, "value": W1 / W,
               "impurity": 2 * W1 * (W - W1) / (W * W)}
        nodes.append(rec)
        if depth >= max_depth or idx.size < params.min_samples_split or W1 <= 0 or W1 >= W:
            return node_id
        col, thr, gain = candidate_splits(idx)
        if col < 0:
            return node_id
        go_left = X[idx, col] <= thr
        rec.update(feature=int(col), threshold=float(thr), gain=float(gain))
        rec["left"] = build(idx[go_left], depth + 1)
        rec["right"] = build(idx[~go_left], depth + 1)
        return node_id

    build(np.arange(n, dtype=np.int64), 0)
    return nodes


def _subtree_stats(nodes, total_weight):
    """(risk of subtree leaves, leaf count) for every node, bottom-up."""
    risk = {}
    leaves = {}

    def visit(i):
        nd = nodes[i]
        if nd.get("feature", -1) < 0:
            risk[i] = nd["cover"] * nd["impurity"] / total_weight
            leaves[i] = 1
        else:
            visit(nd["left"])
            visit(nd["right"])
            risk[i] = risk[nd["left"]] + risk[nd["right"]]
            leaves[i] = leaves[nd["left"]] + leaves[nd["right"]]

    visit(0)
    return risk, leaves


def prune_nodes(nodes: list[dict], alpha: float) -> list[dict]:
    """Weakest-link cost-complexity pruning.

    Repeatedly collapses the internal node with the smallest
    ``(R(t) - R(T_t)) / (|leaves(T_t)| - 1)`` while that value is below
    ``alpha``; ties go to the lowest node id.  Returns a new node list.
    """
    nodes = [dict(nd) for nd in nodes]
    total = nodes[0]["cover"]
    while nodes[0].get("feature", -1) >= 0:
        risk, leaves = _subtree_stats(nodes, total)
        best, best_g = None, math.inf
        for i in risk:
            nd = nodes[i]
            if nd.get("feature", -1) < 0:
                continue
            own = nd["cover"] * nd["impurity"] / total
            g = (own - risk[i]) / (leaves[i] - 1)
            if g < best_g or (g == best_g and i < best):
                best, best_g = i, g
        if not best_g < alpha:
            break
        nodes[best]["feature"] = -1
    return nodes


@dataclass
class DecisionTree:
    tree: Tree
    n_features: int
    columns: tuple[str, ...] = ()
    params: TreeParams = field(default_factory=TreeParams)

    def predict_proba(self, X) -> np.ndarray:
        return self.tree.predict(_check_X(X, self.n_features))

    def margin(self, X) -> np.ndarray:
        return self.predict_proba(X)

    @property
    def trees(self) -> list[Tree]:
        return [self.tree]


def _xyw(data: EncodedMatrix):
    if data.n_rows == 0:
        raise EmptyDataset("cannot fit on zero rows")
    if data.labels is None:
        raise ValueError("tree models need labelled data")
    return np.ascontiguousarray(data.values), data.labels.astype(float), data.row_weights.astype(float)


def fit_tree(data: EncodedMatrix, params: TreeParams = TreeParams(), *, _rng=None, _max_features=None) -> DecisionTree:
    """Grow a CART tree on weighted Gini impurity, then prune at ``params.ccp_alpha``.

    Growth stops at ``max_depth``, below ``min_samples_split`` rows, when a
    child would fall under ``min_samples_leaf`` rows, or when no split lowers
    impurity.  A single-class node is a leaf, so single-class data yields a
    one-leaf tree.
    """
    X, y, w = _xyw(data)
    nodes = _grow_cart(X, y, w, params, _rng, _max_features)
    if params.ccp_alpha > 0:
        nodes = prune_nodes(nodes, params.ccp_alpha)
    return DecisionTree(Tree.from_nodes(nodes), X.shape[1], tuple(data.names), params)


def pruning_path(data: EncodedMatrix, params: TreeParams = TreeParams()) -> list[float]:
    """Effective alphas at which successive weakest links collapse."""
    X, y, w = _xyw(data)
    nodes = _grow_cart(X, y, w, params)
    total = nodes[0]["cover"]
    alphas = []
    while nodes[0].get("feature", -1) >= 0:
        risk, leaves = _subtree_stats(nodes, total)
        cand = [
            ((nodes[i]["cover"] * nodes[i]["impurity"] / total - risk[i]) / (leaves[i] - 1), i)
            for i in risk if nodes[i].get("feature", -1) >= 0
        ]
        g, i = min(cand)
        alphas.append(g)
        nodes[i] = dict(nodes[i], feature=-1)
    return alphas


# --------------------------------------------------------------------------
# Random forest


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    min_samples_split: int = 2
    max_features: int | None = None  # default ceil(sqrt(p))
    bootstrap: bool = True
    seed: int = 0

    def tree_params(self) -> TreeParams:
        return TreeParams(self.max_depth, self.min_samples_leaf, self.min_samples_split, 0.0)


def canonical_order(data: EncodedMatrix) -> np.ndarray:
    """Row permutation that depends only on row contents (ties keep input order)."""
    keys = [data.row_weights]
    if data.labels is not None:
        keys.append(data.labels)
    keys.extend(data.values[:, j] for j in range(data.values.shape[1] - 1, -1, -1))
    return np.lexsort(tuple(keys))


@dataclass
class Forest:
    trees: list[Tree]
    n_features: int
    columns: tuple[str, ...] = ()
    params: ForestParams = field(default_factory=ForestParams)
    oob_proba: np.ndarray | None = None

    def predict_proba(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def margin(self, X) -> np.ndarray:
        return self.predict_proba(X)

    def oob_error(self, labels) -> float:
        """Misclassification rate at 0.5 over rows with an out-of-bag prediction."""
        if self.oob_proba is None:
            raise ValueError("forest was fitted without bootstrap")
        ok = ~np.isnan(self.oob_proba)
        pred = self.oob_proba[ok] >= 0.5
        return float(np.mean(pred != (np.asarray(labels)[ok] == 1)))


def fit_forest(data: EncodedMatrix, params: ForestParams = ForestParams()) -> Forest:
    """Bagged CART trees with a random column subset at every split.

    Rows are put into a content-defined order first so the fit does not
    depend on input row order.  Probability is the mean leaf proportion.
    """
    X, y, w = _xyw(data)
    n, p = X.shape
    order = canonical_order(data)
    X, y, w = X[order], y[order], w[order]
    m = params.max_features or math.ceil(math.sqrt(p))
    m = max(1, min(m, p))
    tp = params.tree_params()
    children = np.random.SeedSequence(params.seed).spawn(params.n_estimators)
    trees = []
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n)
    for child in children:
        rng = np.random.default_rng(child)
        if params.bootstrap:
            rows = rng.integers(0, n, size=n)
        else:
            rows = np.arange(n)
        nodes = _grow_cart(
            np.ascontiguousarray(X[rows]), y[rows], w[rows], tp, rng, m
        )
        tree = Tree.from_nodes(nodes)
        trees.append(tree)
        if params.bootstrap:
            out = np.ones(n, bool)
            out[rows] = False
            if out.any():
                oob_sum[out] += tree.predict(X[out])
                oob_cnt[out] += 1
    oob = None
    if params.bootstrap:
        with np.errstate(invalid="ignore", divide="ignore"):
            canon = np.where(oob_cnt > 0, oob_sum / np.maximum(oob_cnt, 1), np.nan)
        oob = np.empty(n)
        oob[order] = canon
    return Forest(trees, p, tuple(data.names), params, oob)


# --------------------------------------------------------------------------
# Gradient boosting


@dataclass(frozen=True)
class BoostParams:
    n_rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 6
    min_child_weight: float = 1.0
    gamma: float = 0.0
    colsample: float = 1.0
    reg_lambda: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.colsample <= 1:
            raise ValueError("colsample must lie in (0, 1]")
        if self.n_rounds < 0 or self.learning_rate <= 0:
            raise ValueError("n_rounds >= 0 and learning_rate > 0 required")


def logloss_grad_hess(y, margin, w=None):
    """First and second derivative of weighted log-loss w.r.t. the margin."""
    p = expit(margin)
    w = np.ones_like(p) if w is None else np.asarray(w, float)
    return w * (p - y), w * p * (1 - p)


def weighted_logloss(y, margin, w=None) -> float:
    w = np.ones(len(y)) if w is None else np.asarray(w, float)
    m = np.asarray(margin, float)
    loss = np.logaddexp(0, m) - y * m
    return float(np.sum(w * loss) / np.sum(w))


def _grow_boost(X, g, h, w, cols, params: BoostParams) -> list[dict]:
    nodes: list[dict] = []
    lam = params.reg_lambda

    def build(idx, depth):
        node_id = len(nodes)
        G = float(g[idx].sum())
        H = float(h[idx].sum())
        rec = {"n": int(idx.size), "cover": float(w[idx].sum()), "value": -G / (H + lam)}
        nodes.append(rec)
        if depth >= params.max_depth or idx.size < 2:
            return node_id
        col, thr, gain = _kernels.best_boost_split(
            X, g, h, idx, cols, lam, params.gamma, params.min_child_weight
        )
        if col < 0:
            return node_id
        go_left = X[idx, col] <= thr
        rec.update(feature=int(col), threshold=float(thr), gain=float(gain))
        rec["left"] = build(idx[go_left], depth + 1)
        rec["right"] = build(idx[~go_left], depth + 1)
        return node_id

    build(np.arange(X.shape[0], dtype=np.int64), 0)
    return nodes


@dataclass
class BoostedEnsemble:
    base_score: float
    learning_rate: float
    trees: list[Tree]
    n_features: int
    columns: tuple[str, ...] = ()
    params: BoostParams = field(default_factory=BoostParams)
    train_loss: list[float] = field(default_factory=list)

    def margin(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.margin(X))


def fit_gbdt(data: EncodedMatrix, params: BoostParams = BoostParams()) -> BoostedEnsemble:
    """Second-order boosting of regression trees on the logistic loss.

    Starts from the log-odds of the weighted base rate.  Each round fits a
    tree to gradients ``w (p - y)`` and hessians ``w p (1 - p)`` on a random
    column subset, accepting splits whose regularised gain minus ``gamma``
    is positive and whose children keep hessian mass at least
    ``min_child_weight``.  Leaf weight is ``-G / (H + lambda)``.
    """
    X, y, w = _xyw(data)
    n, p = X.shape
    if not (np.any(y == 1) and np.any(y == 0)):
        raise SingleClass("boosting needs both classes present")
    rate = float(np.sum(w * y) / np.sum(w))
    base = math.log(rate / (1 - rate))
    F = np.full(n, base)
    rng = np.random.default_rng(params.seed)
    k = max(1, int(params.colsample * p))
    trees = []
    losses = [weighted_logloss(y, F, w)]
    for _ in range(params.n_rounds):
        g, h = logloss_grad_hess(y, F, w)
        cols = np.sort(rng.choice(p, size=k, replace=False)).astype(np.int64)
        tree = Tree.from_nodes(_grow_boost(X, g, h, w, cols, params))
        trees.append(tree)
        F = F + params.learning_rate * tree.predict(X)
        losses.append(weighted_logloss(y, F, w))
    return BoostedEnsemble(base, params.learning_rate, trees, p, tuple(data.names), params, losses)


def predict_proba(model, X) -> np.ndarray:
    """Probability of the positive class for any fitted tree model."""
    return model.predict_proba(X)
