"""Cost-sensitive class weights and SMOTE-NC oversampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import SingleClass, TooFewMinority
from .events import EncodedMatrix


def class_weights(labels) -> tuple[float, float]:
    """Inverse-frequency weights normalised so the mean row weight is one.

    ``w_c = N / (2 n_c)``, hence ``w0 * n0 == w1 * n1``.
    """
    labels = np.asarray(labels)
    n = labels.size
    n1 = int(np.count_nonzero(labels == 1))
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        raise SingleClass("class weights need both classes present")
    return n / (2 * n0), n / (2 * n1)


def weighted(matrix: EncodedMatrix) -> EncodedMatrix:
    """Copy of ``matrix`` with class-balancing row weights applied."""
    w0, w1 = class_weights(matrix.labels)
    return matrix.with_weights(np.where(matrix.labels == 1, w1, w0) * matrix.row_weights)


@dataclass(frozen=True)
class SmoteParams:
    k_neighbors: int = 5
    target_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be at least 1")
        if not 0 < self.target_ratio <= 1:
            raise ValueError("target_ratio must lie in (0, 1]")


def _nominal_codes(matrix: EncodedMatrix, groups: dict[str, list[int]]) -> np.ndarray:
    """Integer code per row and nominal variable (0 = no indicator active)."""
    codes = np.empty((matrix.n_rows, len(groups)), dtype=np.int64)
    for g, cols in enumerate(groups.values()):
        block = matrix.values[:, cols] > 0.5
        codes[:, g] = np.where(block.any(axis=1), block.argmax(axis=1) + 1, 0)
    return codes


def _mode_with_tiebreak(values: np.ndarray, preferred: int) -> int:
    uniq, counts = np.unique(values, return_counts=True)
    best = uniq[counts == counts.max()]
    if preferred in best:
        return int(preferred)
    return int(best.min())


def smote_nc(data: EncodedMatrix, params: SmoteParams = SmoteParams()) -> EncodedMatrix:
    """Append synthetic minority rows (SMOTE-NC).

    Continuous columns are those whose metadata carries no level; every
    other source variable is nominal and handled as one unit, so one-hot
    groups stay consistent.  Distances are squared Euclidean on continuous
    features standardised by their full-data standard deviation, plus
    ``med**2`` per nominal mismatch, where ``med`` is the median of the
    minority-class standard deviations of those standardised features.

    Each synthetic row interpolates between a random minority seed row and
    one of its ``k`` nearest minority neighbours; nominal variables take the
    most frequent value among the ``k`` neighbours, ties going to the seed
    row's value.  Rows are appended until ``n_minority / n_majority`` reaches
    ``target_ratio`` (rounded down); original rows are untouched.
    """
    if data.labels is None:
        raise ValueError("SMOTE-NC needs labelled data")
    labels = data.labels
    n1 = int(np.count_nonzero(labels == 1))
    n0 = labels.size - n1
    if n0 == 0 or n1 == 0:
        raise SingleClass("SMOTE-NC needs both classes present")
    minority_label = 1 if n1 <= n0 else 0
    n_min, n_maj = min(n0, n1), max(n0, n1)
    k = params.k_neighbors
    if n_min <= k:
        raise TooFewMinority(f"{n_min} minority rows cannot supply {k} neighbours")

    groups = data.groups()
    cont_cols = [j for j, c in enumerate(data.columns) if c.level is None]
    if not cont_cols:
        raise ValueError("SMOTE-NC needs at least one continuous column")
    nominal = {src: cols for src, cols in groups.items() if data.columns[cols[0]].level is not None}

    n_new = max(0, math.floor(params.target_ratio * n_maj) - n_min)
    if n_new == 0:
        return data

    minority = np.flatnonzero(labels == minority_label)
    scale = data.values[:, cont_cols].std(axis=0)
    scale[scale == 0] = 1.0
    cont = data.values[np.ix_(minority, cont_cols)] / scale
    med = float(np.median(cont.std(axis=0)))
    codes = _nominal_codes(data, nominal)[minority]

    d2 = ((cont[:, None, :] - cont[None, :, :]) ** 2).sum(axis=2)
    d2 += med**2 * (codes[:, None, :] != codes[None, :, :]).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    neighbours = np.argsort(d2, axis=1, kind="stable")[:, :k]

    rng = np.random.default_rng(params.seed)
    seeds = rng.integers(0, n_min, size=n_new)
    picks = rng.integers(0, k, size=n_new)
    gaps = rng.uniform(size=n_new)

    new_values = np.empty((n_new, data.values.shape[1]))
    origin = np.empty((n_new, 2), dtype=np.int64)
    group_cols = list(nominal.values())
    for r in range(n_new):
        s = seeds[r]
        nbrs = neighbours[s]
        nb = nbrs[picks[r]]
        row = data.values[minority[s]].copy()
        row[cont_cols] = row[cont_cols] + gaps[r] * (data.values[minority[nb], cont_cols] - row[cont_cols])
        for g, cols in enumerate(group_cols):
            code = _mode_with_tiebreak(codes[nbrs, g], codes[s, g])
            row[cols] = 0.0
            if code > 0:
                row[cols[code - 1]] = 1.0
        new_values[r] = row
        origin[r] = (minority[s], minority[nb])

    return replace(
        data,
        values=np.vstack([data.values, new_values]),
        labels=np.concatenate([labels, np.full(n_new, minority_label)]),
        row_weights=np.concatenate([data.row_weights, np.ones(n_new)]),
        synthetic=np.concatenate([data.synthetic, np.ones(n_new, bool)]),
        origin=np.vstack([data.origin, origin]),
    )


def balance(matrix: EncodedMatrix, mode: str, smote: SmoteParams | None = None) -> EncodedMatrix:
    """Apply a balancing mode: ``none``, ``weights`` or ``smote``."""
    if mode == "none":
        return matrix
    if mode == "weights":
        return weighted(matrix)
    if mode == "smote":
        return smote_nc(matrix, smote or SmoteParams())
    raise ValueError(f"unknown balancing mode {mode!r}")
