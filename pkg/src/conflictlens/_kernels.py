"""Compiled inner loops for split search, routing and path-dependent tree Shapley."""
import numpy as np
from numba import njit


@njit(cache=True)
def best_gini_split(X, w, w1, idx, cols, min_leaf):
    """Best CART split of rows ``idx`` over columns ``cols``.

    Returns ``(column, threshold, decrease)`` where ``decrease`` is the drop
    in weighted Gini impurity (parent minus children, each scaled by its
    weight).  Column -1 means no admissible split.  Columns are scanned in
    the given (ascending) order and thresholds in ascending order; only a
    strictly larger decrease replaces the incumbent.
    """
    n = idx.size
    W = 0.0
    W1 = 0.0
    for r in idx:
        W += w[r]
        W1 += w1[r]
    parent = 2.0 * W1 * (W - W1) / W
    tol = 1e-12 * max(parent, 1e-300)
    best_col = -1
    best_thr = 0.0
    best_gain = 0.0
    vals = np.empty(n)
    for c in cols:
        for i in range(n):
            vals[i] = X[idx[i], c]
        order = np.argsort(vals, kind="mergesort")
        cw = 0.0
        cw1 = 0.0
        for i in range(n - 1):
            r = idx[order[i]]
            cw += w[r]
            cw1 += w1[r]
            v = vals[order[i]]
            vn = vals[order[i + 1]]
            if vn <= v:
                continue
            nl = i + 1
            if nl < min_leaf or n - nl < min_leaf:
                continue
            wr = W - cw
            wr1 = W1 - cw1
            imp_l = 2.0 * cw1 * (cw - cw1) / cw
            imp_r = 2.0 * wr1 * (wr - wr1) / wr if wr > 0 else 0.0
            gain = parent - imp_l - imp_r
            if gain > best_gain + tol:
                best_gain = gain
                best_col = c
                thr = v + 0.5 * (vn - v)
                if thr >= vn:
                    thr = v
                best_thr = thr
    return best_col, best_thr, best_gain


@njit(cache=True)
def best_boost_split(X, g, h, idx, cols, lam, gamma, min_child_weight):
    """Best second-order split; returns ``(column, threshold, gain)``."""
    n = idx.size
    G = 0.0
    H = 0.0
    for r in idx:
        G += g[r]
        H += h[r]
    parent = G * G / (H + lam)
    best_col = -1
    best_thr = 0.0
    best_gain = 0.0
    vals = np.empty(n)
    for c in cols:
        for i in range(n):
            vals[i] = X[idx[i], c]
        order = np.argsort(vals, kind="mergesort")
        GL = 0.0
        HL = 0.0
        for i in range(n - 1):
            r = idx[order[i]]
            GL += g[r]
            HL += h[r]
            v = vals[order[i]]
            vn = vals[order[i + 1]]
            if vn <= v:
                continue
            GR = G - GL
            HR = H - HL
            if HL < min_child_weight or HR < min_child_weight:
                continue
            gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - gamma
            if gain > best_gain:
                best_gain = gain
                best_col = c
                thr = v + 0.5 * (vn - v)
                if thr >= vn:
                    thr = v
                best_thr = thr
    return best_col, best_thr, best_gain


@njit(cache=True)
def apply_tree(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


# Path-dependent TreeSHAP: the path of unique features met so far is kept in
# flat buffers; each recursion level works on its own slice starting at
# ``off``.


@njit(cache=True)
def _extend(feat, zero, one, pw, off, depth, zero_fraction, one_fraction, feature_index):
    feat[off + depth] = feature_index
    zero[off + depth] = zero_fraction
    one[off + depth] = one_fraction
    pw[off + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[off + i + 1] += one_fraction * pw[off + i] * (i + 1) / (depth + 1)
        pw[off + i] = zero_fraction * pw[off + i] * (depth - i) / (depth + 1)


@njit(cache=True)
def _unwind(feat, zero, one, pw, off, depth, path_index):
    one_fraction = one[off + path_index]
    zero_fraction = zero[off + path_index]
    next_one = pw[off + depth]
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pw[off + i]
            pw[off + i] = next_one * (depth + 1) / ((i + 1) * one_fraction)
            next_one = tmp - pw[off + i] * zero_fraction * (depth - i) / (depth + 1)
        else:
            pw[off + i] = pw[off + i] * (depth + 1) / (zero_fraction * (depth - i))
    for i in range(path_index, depth):
        feat[off + i] = feat[off + i + 1]
        zero[off + i] = zero[off + i + 1]
        one[off + i] = one[off + i + 1]


@njit(cache=True)
def _unwound_sum(zero, one, pw, off, depth, path_index):
    one_fraction = one[off + path_index]
    zero_fraction = zero[off + path_index]
    next_one = pw[off + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = next_one * (depth + 1) / ((i + 1) * one_fraction)
            total += tmp
            next_one = pw[off + i] - tmp * zero_fraction * (depth - i) / (depth + 1)
        else:
            total += pw[off + i] / (zero_fraction * (depth - i) / (depth + 1))
    return total


# Recursive njit functions are not cached: reloading them from the on-disk
# cache crashes the interpreter.
@njit
def _tree_shap_recurse(left, right, feature, threshold, value, cover, x, phi, node,
                       depth, parent_off, parent_zero, parent_one, parent_feature,
                       feat, zero, one, pw):
    off = parent_off + depth + 1
    for i in range(depth):
        feat[off + i] = feat[parent_off + i]
        zero[off + i] = zero[parent_off + i]
        one[off + i] = one[parent_off + i]
        pw[off + i] = pw[parent_off + i]
    _extend(feat, zero, one, pw, off, depth, parent_zero, parent_one, parent_feature)

    split = feature[node]
    if split < 0:
        for i in range(1, depth + 1):
            w = _unwound_sum(zero, one, pw, off, depth, i)
            phi[feat[off + i]] += w * (one[off + i] - zero[off + i]) * value[node]
        return

    if x[split] <= threshold[node]:
        hot = left[node]
        cold = right[node]
    else:
        hot = right[node]
        cold = left[node]
    hot_zero = cover[hot] / cover[node]
    cold_zero = cover[cold] / cover[node]
    incoming_zero = 1.0
    incoming_one = 1.0

    path_index = 0
    while path_index <= depth:
        if feat[off + path_index] == split:
            break
        path_index += 1
    if path_index != depth + 1:
        incoming_zero = zero[off + path_index]
        incoming_one = one[off + path_index]
        _unwind(feat, zero, one, pw, off, depth, path_index)
        depth -= 1

    _tree_shap_recurse(left, right, feature, threshold, value, cover, x, phi, hot,
                       depth + 1, off, hot_zero * incoming_zero, incoming_one, split,
                       feat, zero, one, pw)
    _tree_shap_recurse(left, right, feature, threshold, value, cover, x, phi, cold,
                       depth + 1, off, cold_zero * incoming_zero, 0.0, split,
                       feat, zero, one, pw)


@njit
def tree_shap(left, right, feature, threshold, value, cover, X, max_depth, n_features):
    """Path-dependent Shapley values of one tree for every row of ``X``."""
    n = X.shape[0]
    out = np.zeros((n, n_features))
    size = (max_depth + 2) * (max_depth + 3) + 2
    feat = np.empty(size, dtype=np.int64)
    zero = np.empty(size)
    one = np.empty(size)
    pw = np.empty(size)
    for i in range(n):
        # Slot n_features absorbs the root sentinel feature (-1 -> last).
        phi = np.zeros(n_features + 1)
        _tree_shap_recurse(left, right, feature, threshold, value, cover, X[i], phi, 0,
                           0, 0, 1.0, 1.0, n_features, feat, zero, one, pw)
        out[i] = phi[:n_features]
    return out
